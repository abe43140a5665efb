"""CLF-CBF quadratic-program safety filter in closed form.

At each state the filter solves

    min_{u', delta}  |u'|^2 + p delta^2
    s.t.  F_lam + b1 u' >= 0           (barrier row)
          F_V   + b2 u' <= delta       (Lyapunov row, softened)

with F_lam = L_{f'} h + lambda(x) h,  F_V = L_{f'} V + gamma_c V,
b1 = L_g h, b2 = L_g V and f' = f + g u_nom.  The minimizer is written down
piecewise over six regions (which rows are active, and whether b1 vanishes).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .poly import DimensionError, PolyEvaluator, PolyMatrix, Polynomial, lie_derivative

VARIANTS = ("ames", "tan", "modified")
COND_LIMIT = 1e12


class FilterError(RuntimeError):
    def __init__(self, msg: str, state=None):
        super().__init__(msg)
        self.state = None if state is None else np.asarray(state, dtype=float).copy()


class PartitionError(FilterError):
    """No region (or more than one) claims the state."""


class InfeasibleQPError(PartitionError):
    """F_lam < 0 while L_g h = 0: no input satisfies the barrier row."""


class SingularSystemError(FilterError):
    """The 2x2 system of the doubly-active region is (nearly) singular."""


class Region(str, enum.Enum):
    CLFBAR_CBFBAR = "clfbar_cbfbar"
    CLFBAR_CBF1 = "clfbar_cbf1"
    CLFBAR_CBF2 = "clfbar_cbf2"
    CLF_CBFBAR = "clf_cbfbar"
    CLF_CBF1 = "clf_cbf1"
    CLF_CBF2 = "clf_cbf2"

    @property
    def code(self) -> int:
        return REGION_CODES[self]


REGIONS = list(Region)
REGION_CODES = {r: k for k, r in enumerate(REGIONS)}


def _const(p: Polynomial) -> bool:
    return p.degree <= 0


@dataclass(frozen=True, eq=False)
class SystemModel:
    f: tuple[Polynomial, ...]
    g: PolyMatrix
    u_nom: tuple[Polynomial, ...]
    V: Polynomial
    h: Polynomial
    lam: Polynomial
    gamma_c: float = 1.0
    p: float = 1.0
    variant: str = "modified"
    fv_uses_h_arg: bool = False
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "f", tuple(self.f))
        object.__setattr__(self, "u_nom", tuple(self.u_nom))
        n, m = self.g.shape
        if len(self.f) != n:
            raise DimensionError(f"f has {len(self.f)} entries but g has {n} rows")
        if len(self.u_nom) != m:
            raise DimensionError(f"u_nom has {len(self.u_nom)} entries but g has {m} columns")
        polys = list(self.f) + list(self.u_nom) + [self.V, self.h, self.lam] + self.g.flat()
        if any(q.nvars != n for q in polys):
            raise DimensionError("all polynomials must have nvars equal to the state dimension")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.gamma_c <= 0 or self.p <= 0:
            raise ValueError("gamma_c and p must be positive")
        if self.variant in ("ames", "tan") and not _const(self.lam):
            raise ValueError(f"variant {self.variant!r} needs a constant lambda")
        if self.variant == "ames" and any(not q.is_zero() for q in self.u_nom):
            raise ValueError("variant 'ames' has no nominal controller (u_nom must be 0)")
        zero = np.zeros(n)
        if any(abs(fi(zero)) > 1e-12 for fi in self.f):
            raise ValueError("f(0) must vanish")
        if abs(self.V(zero)) > 1e-12:
            raise ValueError("V(0) must vanish")
        cloud = np.random.default_rng(12345).uniform(-1.0, 1.0, size=(64, n))
        if np.any(PolyEvaluator([self.V])(cloud)[:, 0] <= 0):
            raise ValueError("V is not positive on the sample cloud")

        fp = self.f_prime
        b1 = tuple(lie_derivative(self.g.col(j), self.h) for j in range(m))
        b2 = tuple(lie_derivative(self.g.col(j), self.V) for j in range(m))
        Lfh = lie_derivative(fp, self.h)
        LfV = lie_derivative(fp, self.V)
        F_lam = Lfh + self.lam * self.h
        F_V = LfV + (self.h if self.fv_uses_h_arg else self.V) * self.gamma_c
        object.__setattr__(self, "_lie", {"b1": b1, "b2": b2, "Lfh": Lfh, "LfV": LfV, "F_lam": F_lam, "F_V": F_V})
        ev = PolyEvaluator([F_lam, F_V, self.h, self.V, *b1, *b2, *self.u_nom, *fp, *self.g.flat()])
        object.__setattr__(self, "_ev", ev)
        object.__setattr__(self, "_grads", (tuple(self.h.gradient()), tuple(self.V.gradient())))

    @property
    def n(self) -> int:
        return self.g.rows

    @property
    def m(self) -> int:
        return self.g.cols

    @property
    def f_prime(self) -> tuple[Polynomial, ...]:
        if self.variant == "ames":
            return self.f
        return tuple(
            fi + sum((self.g[i, j] * self.u_nom[j] for j in range(self.m)), Polynomial.zero(self.n))
            for i, fi in enumerate(self.f)
        )

    @property
    def F_lam_poly(self) -> Polynomial:
        return self._lie["F_lam"]

    @property
    def F_V_poly(self) -> Polynomial:
        return self._lie["F_V"]

    @property
    def Lfh_poly(self) -> Polynomial:
        return self._lie["Lfh"]

    @property
    def LfV_poly(self) -> Polynomial:
        return self._lie["LfV"]

    @property
    def b1_polys(self) -> tuple[Polynomial, ...]:
        return self._lie["b1"]

    @property
    def b2_polys(self) -> tuple[Polynomial, ...]:
        return self._lie["b2"]

    def with_(self, **changes) -> "SystemModel":
        return replace(self, **changes)

    def evaluate_all(self, X: np.ndarray) -> dict[str, np.ndarray]:
        """Batch evaluation of every filter ingredient at states X (N, n)."""
        n, m = self.n, self.m
        out = self._ev(np.atleast_2d(X))
        k = 4
        d = {"F_lam": out[:, 0], "F_V": out[:, 1], "h": out[:, 2], "V": out[:, 3]}
        d["b1"] = out[:, k : k + m]
        d["b2"] = out[:, k + m : k + 2 * m]
        d["u_nom"] = out[:, k + 2 * m : k + 3 * m]
        d["f_prime"] = out[:, k + 3 * m : k + 3 * m + n]
        d["g"] = out[:, k + 3 * m + n :].reshape(-1, n, m)
        return d

    # io

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "m": self.m,
            "f": [q.to_records() for q in self.f],
            "g": self.g.to_records(),
            "u_nom": [q.to_records() for q in self.u_nom],
            "V": self.V.to_records(),
            "h": self.h.to_records(),
            "lambda": self.lam.to_records(),
            "gamma_c": self.gamma_c,
            "p": self.p,
            "variant": self.variant,
            "fv_uses_h_arg": self.fv_uses_h_arg,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemModel":
        n = int(d["n"])
        return cls(
            f=tuple(Polynomial.from_records(n, r) for r in d["f"]),
            g=PolyMatrix.from_records(n, d["g"]),
            u_nom=tuple(Polynomial.from_records(n, r) for r in d["u_nom"]),
            V=Polynomial.from_records(n, d["V"]),
            h=Polynomial.from_records(n, d["h"]),
            lam=Polynomial.from_records(n, d.get("lambda", [{"exponents": [0] * n, "coeff": 1.0}])),
            gamma_c=float(d.get("gamma_c", 1.0)),
            p=float(d.get("p", 1.0)),
            variant=d.get("variant", "modified"),
            fv_uses_h_arg=bool(d.get("fv_uses_h_arg", False)),
            name=d.get("name", ""),
        )


def load_model(path) -> SystemModel:
    return SystemModel.from_dict(json.loads(Path(path).read_text()))


def save_model(model: SystemModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=1) + "\n")


@dataclass
class FilterTerms:
    F_lam: float
    F_V: float
    b1: np.ndarray
    b2: np.ndarray
    h: float
    V: float


@dataclass
class FilterOutput:
    u_prime: np.ndarray
    delta: float
    region: Region
    u_total: np.ndarray
    objective: float


def eval_terms(model: SystemModel, x: Sequence[float]) -> FilterTerms:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != model.n:
        raise DimensionError(f"state has {x.shape[0]} entries, model has n={model.n}")
    d = model.evaluate_all(x[None, :])
    return FilterTerms(float(d["F_lam"][0]), float(d["F_V"][0]), d["b1"][0], d["b2"][0], float(d["h"][0]), float(d["V"][0]))


def region_predicates(t: FilterTerms, p: float) -> dict[Region, bool]:
    FV, Fl = t.F_V, t.F_lam
    nb1 = float(t.b1 @ t.b1)
    nb2 = float(t.b2 @ t.b2)
    c = float(t.b2 @ t.b1)
    b1_zero = not np.any(t.b1)
    return {
        Region.CLFBAR_CBFBAR: FV < 0 and Fl > 0,
        Region.CLFBAR_CBF1: FV < 0 and Fl == 0 and b1_zero,
        Region.CLFBAR_CBF2: Fl <= 0 and FV * nb1 < Fl * c,
        Region.CLF_CBFBAR: FV >= 0 and FV * c < Fl * (1 / p + nb2),
        Region.CLF_CBF1: FV >= 0 and Fl == 0 and b1_zero,
        Region.CLF_CBF2: FV * nb1 >= Fl * c and FV * c >= Fl * (1 / p + nb2) and not b1_zero,
    }


def classify_region(t: FilterTerms, p: float) -> Region:
    hits = [r for r, ok in region_predicates(t, p).items() if ok]
    if len(hits) == 1:
        return hits[0]
    if not hits and t.F_lam < 0 and not np.any(t.b1):
        raise InfeasibleQPError("barrier row infeasible: F_lam < 0 with L_g h = 0")
    raise PartitionError(f"region predicates matched {len(hits)} sets: {[r.value for r in hits]}")


def closed_form(t: FilterTerms, p: float, region: Region, x=None) -> np.ndarray:
    b1, b2 = t.b1, t.b2
    if region in (Region.CLFBAR_CBFBAR, Region.CLFBAR_CBF1):
        return np.zeros_like(b1)
    if region is Region.CLFBAR_CBF2:
        return -t.F_lam * b1 / (b1 @ b1)
    if region in (Region.CLF_CBFBAR, Region.CLF_CBF1):
        return -t.F_V * b2 / (1 / p + b2 @ b2)
    c = b2 @ b1
    M = np.array([[1 / p + b2 @ b2, -c], [-c, b1 @ b1]])
    if np.linalg.cond(M) > COND_LIMIT:
        raise SingularSystemError(f"doubly-active 2x2 system is singular (cond {np.linalg.cond(M):.3g})", x)
    v1, v2 = np.linalg.solve(M, [t.F_V, -t.F_lam])
    return -v1 * b2 + v2 * b1


def solve_filter(model: SystemModel, x: Sequence[float]) -> FilterOutput:
    x = np.asarray(x, dtype=float).reshape(-1)
    t = eval_terms(model, x)
    try:
        region = classify_region(t, model.p)
    except FilterError as e:
        e.state = x.copy()
        raise
    u = closed_form(t, model.p, region, x)
    delta = max(0.0, t.F_V + float(t.b2 @ u))
    u_nom = np.array([q(x) for q in model.u_nom]) if model.variant != "ames" else np.zeros(model.m)
    return FilterOutput(u, delta, region, u_nom + u, float(u @ u + model.p * delta * delta))


def solve_filter_batch(model: SystemModel, X: np.ndarray):
    """Vectorized closed form.

    Returns (u_prime (N, m), delta (N,), region codes (N,), data dict).
    Region code -1 marks states where no region applies (infeasible barrier
    row) and -2 a singular doubly-active system; u' is NaN there.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    d = model.evaluate_all(X)
    p = model.p
    FV, Fl, b1, b2 = d["F_V"], d["F_lam"], d["b1"], d["b2"]
    if b1.shape[1] == 1:
        b1v, b2v = b1[:, 0], b2[:, 0]
        nb1, nb2, c = b1v * b1v, b2v * b2v, b1v * b2v
    else:
        nb1 = np.einsum("ij,ij->i", b1, b1)
        nb2 = np.einsum("ij,ij->i", b2, b2)
        c = np.einsum("ij,ij->i", b1, b2)
    b1z = nb1 == 0
    clf_ok = FV < 0
    a11 = 1 / p + nb2
    r_clf2 = FV * c >= Fl * a11
    r_cbf2 = FV * nb1 >= Fl * c
    fl_zero = (Fl == 0) & b1z
    r0 = clf_ok & (Fl > 0)
    r1 = clf_ok & fl_zero
    r2 = (Fl <= 0) & ~r_cbf2
    r3 = ~clf_ok & ~r_clf2
    r4 = ~clf_ok & fl_zero
    r5 = r_cbf2 & r_clf2 & ~b1z
    count = r0.astype(np.int64) + r1 + r2 + r3 + r4 + r5
    code = np.where(count == 1, r1 + 2 * r2 + 3 * r3 + 4 * r4 + 5 * r5, -1)
    present = np.bincount(code + 1, minlength=7)  # present[k + 1] counts region k
    N, m = b1.shape
    u = np.zeros((N, m))
    if present[3]:
        sel = code == 2
        u[sel] = -(Fl[sel] / nb1[sel])[:, None] * b1[sel]
    if present[4] or present[5]:
        sel = (code == 3) | (code == 4)
        u[sel] = -(FV[sel] / a11[sel])[:, None] * b2[sel]
    if present[6]:
        sel = np.flatnonzero(code == 5)
        s11, s12, s22 = a11[sel], -c[sel], nb1[sel]
        det = s11 * s22 - s12 * s12
        # cond of a symmetric 2x2 from its eigenvalues
        tr = s11 + s22
        disc = np.sqrt(np.maximum((s11 - s22) ** 2 + 4 * s12 * s12, 0.0))
        lmax, lmin = 0.5 * (tr + disc), 0.5 * (tr - disc)
        bad = (lmin <= 0) | (lmax > COND_LIMIT * np.abs(lmin))
        with np.errstate(divide="ignore", invalid="ignore"):
            v1 = (s22 * FV[sel] - s12 * (-Fl[sel])) / det
            v2 = (-s12 * FV[sel] + s11 * (-Fl[sel])) / det
        u[sel] = -v1[:, None] * b2[sel] + v2[:, None] * b1[sel]
        code[sel[bad]] = -2
    if present[0] or present[6]:
        u[code < 0] = np.nan
    delta = np.maximum(0.0, FV + (b2 * u).sum(axis=1))
    return u, delta, code, d


# independent check


def _terms_from_scratch(model: SystemModel, x: np.ndarray):
    n, m = model.n, model.m
    g = model.g.evaluate(x)
    u_nom = np.array([q(x) for q in model.u_nom]) if model.variant != "ames" else np.zeros(m)
    fx = np.array([q(x) for q in model.f])
    fpx = fx + g @ u_nom
    grad_h, grad_V = model._grads
    dh = np.array([q(x) for q in grad_h])
    dV = np.array([q(x) for q in grad_V])
    hx, Vx = model.h(x), model.V(x)
    F_lam = dh @ fpx + model.lam(x) * hx
    F_V = dV @ fpx + model.gamma_c * (hx if model.fv_uses_h_arg else Vx)
    return F_lam, F_V, dh @ g, dV @ g, u_nom


def qp_oracle(model: SystemModel, x: Sequence[float]) -> FilterOutput:
    """Solve the filter QP by enumerating active sets of its two rows."""
    x = np.asarray(x, dtype=float).reshape(-1)
    F_lam, F_V, b1, b2, u_nom = _terms_from_scratch(model, x)
    m, p = model.m, model.p
    # z = (u', delta); objective 0.5 z^T H z; rows G z >= r
    Hinv = np.concatenate([np.full(m, 0.5), [0.5 / p]])
    G = np.array([np.concatenate([b1, [0.0]]), np.concatenate([-b2, [1.0]])])
    r = np.array([-F_lam, F_V])
    scale = 1.0 + np.abs(r).max() + np.abs(G).max()
    best = None
    for active in ((), (0,), (1,), (0, 1)):
        if active:
            Ga = G[list(active)]
            K = (Ga * Hinv) @ Ga.T
            ra = r[list(active)]
            if len(active) == 1:
                det = K[0, 0]
                if abs(det) <= 1e-14 * max(1.0, abs(det)):
                    continue
                nu = ra / det
            else:
                det = K[0, 0] * K[1, 1] - K[0, 1] * K[1, 0]
                if abs(det) <= 1e-14 * max(1.0, np.abs(K).max()) ** 2:
                    continue
                nu = np.array([K[1, 1] * ra[0] - K[0, 1] * ra[1], K[0, 0] * ra[1] - K[1, 0] * ra[0]]) / det
            if np.any(nu < -1e-12 * scale):
                continue
            z = Hinv * (Ga.T @ nu)
        else:
            z = np.zeros(m + 1)
        if np.any(G @ z - r < -1e-9 * scale):
            continue
        obj = float(z[:m] @ z[:m] + p * z[m] ** 2)
        if best is None or obj < best[0]:
            best = (obj, z, active)
    if best is None:
        raise InfeasibleQPError("no feasible active set", x)
    obj, z, active = best
    u = z[:m]
    delta = float(z[m])
    tag = _region_from_active(active, b1)
    return FilterOutput(u, delta, tag, u_nom + u, obj)


def _region_from_active(active, b1) -> Region:
    b1_zero = not np.any(b1)
    cbf = 0 in active
    clf = 1 in active
    if not cbf:
        return Region.CLF_CBFBAR if clf else Region.CLFBAR_CBFBAR
    if clf:
        return Region.CLF_CBF1 if b1_zero else Region.CLF_CBF2
    return Region.CLFBAR_CBF1 if b1_zero else Region.CLFBAR_CBF2
