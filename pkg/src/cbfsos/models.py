"""Reference models: the planar linear plant x1' = -x2, x2' = -x1 + u."""

from __future__ import annotations

from importlib import resources

import numpy as np
import scipy.linalg as sla

from .cbf_qp import SystemModel, load_model
from .poly import PolyMatrix, Polynomial, variables

SHIPPED = ("linear2d", "linear2d_modified", "linear2d_stabilized")


def barrier_h() -> Polynomial:
    x1, x2 = variables(2)
    return -0.1 * x1**2 - 0.15 * x1 * x2 - 0.1 * x2**2 + 4.9


def reference_lambda() -> Polynomial:
    """The quadratic multiplier reported for this plant with the barrier above."""
    x1, x2 = variables(2)
    return 8.3192 * x1**2 + 22.193 * x1 * x2 + 14.7935 * x2**2 + 5.591


def plant():
    x1, x2 = variables(2)
    zero = Polynomial.zero(2)
    f = (-x2, -x1)
    g = PolyMatrix([[zero], [Polynomial.constant(1.0, 2)]])
    return f, g


def linear2d(variant: str = "tan", lam: Polynomial | None = None, p: float = 1.0, gamma_c: float = 1.0) -> SystemModel:
    """Open-loop plant, no nominal controller, V = |x|^2."""
    x1, x2 = variables(2)
    f, g = plant()
    return SystemModel(
        f=f,
        g=g,
        u_nom=(Polynomial.zero(2),),
        V=x1**2 + x2**2,
        h=barrier_h(),
        lam=lam if lam is not None else Polynomial.constant(1.0, 2),
        gamma_c=gamma_c,
        p=p,
        variant=variant,
        name=f"linear2d-{variant}",
    )


def stabilizing_gain() -> np.ndarray:
    return np.array([2.0, -1.0])


def lyapunov_matrix() -> np.ndarray:
    """P with A_cl^T P + P A_cl = -I for the loop closed by u = 2 x1 - x2."""
    A = np.array([[0.0, -1.0], [-1.0, 0.0]]) + np.outer([0.0, 1.0], stabilizing_gain())
    return sla.solve_continuous_lyapunov(A.T, -np.eye(2))


def linear2d_stabilized(lam: Polynomial | None = None, p: float = 1.0, gamma_c: float | None = None) -> SystemModel:
    x1, x2 = variables(2)
    f, g = plant()
    P = lyapunov_matrix()
    V = P[0, 0] * x1**2 + 2 * P[0, 1] * x1 * x2 + P[1, 1] * x2**2
    if gamma_c is None:
        # half the largest rate compatible with dV/dt = -|x|^2
        gamma_c = 0.5 / float(np.linalg.eigvalsh(P).max())
    k1, k2 = stabilizing_gain()
    return SystemModel(
        f=f,
        g=g,
        u_nom=(k1 * x1 + k2 * x2,),
        V=V,
        h=barrier_h(),
        lam=lam if lam is not None else Polynomial.constant(1.0, 2),
        gamma_c=gamma_c,
        p=p,
        variant="modified",
        name="linear2d-stabilized",
    )


def shipped_model(name: str) -> SystemModel:
    if name not in SHIPPED:
        raise KeyError(f"unknown model {name!r}; shipped: {', '.join(SHIPPED)}")
    ref = resources.files("cbfsos").joinpath("data").joinpath(f"{name}.json")
    with resources.as_file(ref) as path:
        return load_model(path)


def build_shipped() -> dict[str, SystemModel]:
    """Construct the shipped models from code (used to regenerate the JSON files)."""
    return {
        "linear2d": linear2d("tan"),
        "linear2d_modified": linear2d("modified", lam=reference_lambda()).with_(name="linear2d-modified"),
        "linear2d_stabilized": linear2d_stabilized(),
    }
