"""Region-of-attraction level per ROA weight, then a Monte-Carlo check of the
best level and of inflated levels (negative control)."""

import argparse

from cbfsos.models import linear2d_stabilized
from cbfsos.sim import SimConfig, roa_monte_carlo
from cbfsos.synthesis import ROA_WEIGHTS, DegreeBudget, estimate_roa


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=100)
    ap.add_argument("--rounds", type=int, default=0, help="alternation rounds after the first step")
    ap.add_argument("--inflate", default="2,5,10")
    args = ap.parse_args()

    model = linear2d_stabilized()
    best = None
    for w in ROA_WEIGHTS:
        res = estimate_roa(model, DegreeBudget(2, 0, 0), weight=w, max_rounds=args.rounds)
        print(f"weight {w:>6g}: status={res.status} eta={res.eta:.6g}")
        if res.ok and (best is None or res.eta > best.eta):
            best = res
    if best is None:
        print("no level certified")
        return
    cfg = SimConfig(T=50.0, dt=1e-2)
    for k in [1.0] + [float(v) for v in args.inflate.split(",")]:
        mc = roa_monte_carlo(model, k * best.eta, N=args.samples, cfg=cfg, seed=0)
        print(f"level {k:g} x {best.eta:.4g}: converged {mc.fraction_converged:.2f}, "
              f"min h {min(mc.min_h):.4g}, {len(mc.counterexamples)} counterexamples")


if __name__ == "__main__":
    main()
