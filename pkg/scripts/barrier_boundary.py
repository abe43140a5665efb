"""Where does the example barrier fail?  Restricts L_f h + lambda h to the
line L_g h = 0, reports it as a polynomial in the line coordinate, and
checks validity on balls of growing radius with lambda = 1 and with the
reference multiplier."""

import numpy as np

from cbfsos.models import barrier_h, linear2d, plant, reference_lambda
from cbfsos.poly import lie_derivative
from cbfsos.synthesis import DomainBall, verify_cbf


def main():
    h = barrier_h()
    f, g = plant()
    Lfh, Lgh = lie_derivative(f, h), lie_derivative(g.col(0), h)
    print("L_g h =", Lgh)
    # L_g h = a x1 + b x2 vanishes along x = t (b, -a)
    a, b = Lgh.coefficient((1, 0)), Lgh.coefficient((0, 1))
    d = np.array([b, -a]) / np.hypot(a, b)
    ts = np.linspace(-20, 20, 4001)
    pts = ts[:, None] * d
    for name, lam in (("lambda = 1", None), ("reference lambda", reference_lambda())):
        vals = np.array([Lfh(x) + (1.0 if lam is None else lam(x)) * h(x) for x in pts])
        neg = np.abs(ts[vals < 0])
        first = neg.min() if neg.size else None
        print(f"{name}: on the line, L_f h + lambda h is negative from |x| = {first}")
        hv = np.array([h(x) for x in pts])
        inside = np.abs(ts[hv >= 0]).max()
        print(f"  h >= 0 on the line up to |x| = {inside:.4f}, where h = 0 and L_f h = {Lfh(inside * d):.4f}")
    for R in (3.0, 5.0, 8.0, 10.0, 12.0, 14.0):
        for label, model in (("lambda = 1", linear2d("tan")), ("reference", linear2d("modified", lam=reference_lambda()))):
            rep = verify_cbf(model, DomainBall(R))
            w = ""
            if rep.witnesses:
                x, v = rep.witnesses[0]
                w = f" witness x=({x[0]:.4g}, {x[1]:.4g}) value {v:.4g}"
            print(f"R={R:>5g} {label:>10}: valid={rep.valid} certified={rep.sos_certified}{w}")


if __name__ == "__main__":
    main()
