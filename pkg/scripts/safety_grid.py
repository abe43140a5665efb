"""Closed-loop safety on start grids for every shipped model and ball radius.
Reports min h, filter failures and the first violation per run."""

import argparse

import numpy as np

from cbfsos.models import SHIPPED, shipped_model
from cbfsos.sim import SimConfig, analyze, integrate_batch, start_grid
from cbfsos.synthesis import DomainBall, verify_cbf


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--radii", default="5,10")
    ap.add_argument("--per-axis", type=int, default=5)
    ap.add_argument("--horizon", type=float, default=20.0)
    ap.add_argument("--dt", type=float, default=1e-3)
    ap.add_argument("--all", action="store_true", help="simulate balls that fail verification too")
    args = ap.parse_args()

    for name in SHIPPED:
        model = shipped_model(name)
        for R in (float(v) for v in args.radii.split(",")):
            valid = verify_cbf(model, DomainBall(R)).valid
            if not (valid or args.all):
                print(f"{name} R={R:g}: not verified, skipped")
                continue
            X0 = start_grid(model, R, args.per_axis)
            trajs = integrate_batch(model, X0, SimConfig(T=args.horizon, dt=args.dt))
            reps = [analyze(t, model) for t in trajs]
            bad = [(x0, r) for x0, r in zip(X0, reps) if r.safety_violated or r.error]
            print(f"{name} R={R:g} verified={valid}: {len(X0)} starts, min_h={min(r.min_h for r in reps):.4g}, "
                  f"{len(bad)} unsafe or failed")
            for x0, r in bad:
                print(f"    x0={np.round(x0, 4).tolist()} first violation t={r.first_violation_time} error={r.error}")


if __name__ == "__main__":
    main()
