"""Robustness margin eta for the constant and polynomial multipliers across
ball radii and multiplier degrees. Prints a table; --json writes it too."""

import argparse
import json
import time

from cbfsos import sos
from cbfsos.models import barrier_h, linear2d
from cbfsos.synthesis import GLOBAL, DegreeBudget, DomainBall, margin_fixed_h


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--radii", default="2,5,8,10,12", help="comma-separated ball radii; 0 means no ball")
    ap.add_argument("--degrees", default="0,2,4")
    ap.add_argument("--eps", type=float, default=1e-3)
    ap.add_argument("--free-origin", action="store_true", help="leave lambda(0) free instead of pinning it to 1")
    ap.add_argument("--json", default=None)
    args = ap.parse_args()

    model, h = linear2d("modified"), barrier_h()
    rows = []
    print(f"{'radius':>7} {'deg':>4} {'status':>11} {'eta':>12} {'verified':>9} {'seconds':>8}")
    for r in (float(v) for v in args.radii.split(",")):
        ball = DomainBall(r) if r > 0 else GLOBAL
        for d in (int(v) for v in args.degrees.split(",")):
            t0 = time.perf_counter()
            res = margin_fixed_h(model, h, DegreeBudget(deg_lambda=d, deg_lambda1=max(3, d + 1)), ball, args.eps,
                                 lambda_origin=None if args.free_origin else 1.0)
            ok = res.certificate is not None and sos.verify_certificate(res.certificate).passed
            dt = time.perf_counter() - t0
            rows.append({"radius": r, "deg_lambda": d, "status": res.status, "eta": res.eta, "verified": ok, "seconds": dt})
            eta = f"{res.eta:.6g}" if res.eta is not None else "-"
            print(f"{r:>7g} {d:>4} {res.status:>11} {eta:>12} {str(ok):>9} {dt:>8.2f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
