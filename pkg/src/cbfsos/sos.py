"""Sum-of-squares programs compiled to standard-form SDPs.

A program owns scalar decision variables (``CoeffVar``).  Polynomials whose
coefficients are affine in those variables (``DecisionPoly``) are constrained
to be SOS through Gram matrices.  Products of two variable-bearing
polynomials are refused: bilinear programs have to be split by the caller.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from numbers import Real
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg as sla

from . import sdp as sdp_mod
from .poly import Monomial, Polynomial, grlex_key, monomial_basis, mono_mul

DEFAULT_EPS = 1e-3
TOL_IDENTITY = 1e-6
TOL_EIG = 1e-7


class BilinearityError(TypeError):
    """Raised when two decision polynomials would be multiplied."""


class DegreeError(ValueError):
    pass


@dataclass(frozen=True)
class CoeffVar:
    id: int
    description: str = ""


class AffineExpr:
    """const + sum_i weight_i * var_i, keyed by CoeffVar id."""

    __slots__ = ("const", "coeffs")

    def __init__(self, const: float = 0.0, coeffs: Mapping[int, float] | None = None):
        self.const = float(const)
        self.coeffs = {int(k): float(v) for k, v in (coeffs or {}).items() if v != 0.0}

    @classmethod
    def var(cls, v: CoeffVar | int, weight: float = 1.0) -> "AffineExpr":
        return cls(0.0, {v.id if isinstance(v, CoeffVar) else v: weight})

    def is_constant(self) -> bool:
        return not self.coeffs

    def is_zero(self) -> bool:
        return self.const == 0.0 and not self.coeffs

    def __add__(self, other):
        if isinstance(other, (Real, np.floating)):
            return AffineExpr(self.const + float(other), self.coeffs)
        if not isinstance(other, AffineExpr):
            return NotImplemented
        c = dict(self.coeffs)
        for k, v in other.coeffs.items():
            c[k] = c.get(k, 0.0) + v
        return AffineExpr(self.const + other.const, c)

    __radd__ = __add__

    def __neg__(self):
        return AffineExpr(-self.const, {k: -v for k, v in self.coeffs.items()})

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, s):
        if isinstance(s, AffineExpr):
            if s.is_constant():
                s = s.const
            elif self.is_constant():
                return s * self.const
            else:
                raise BilinearityError("product of two decision variables")
        if not isinstance(s, (Real, np.floating)):
            return NotImplemented
        s = float(s)
        return AffineExpr(self.const * s, {k: v * s for k, v in self.coeffs.items()})

    __rmul__ = __mul__

    def value(self, values: Mapping[int, float]) -> float:
        return self.const + sum(w * values[k] for k, w in self.coeffs.items())

    def __repr__(self):
        return f"AffineExpr({self.const}, {self.coeffs})"

    def to_json(self):
        return {"const": self.const, "coeffs": {str(k): v for k, v in sorted(self.coeffs.items())}}

    @classmethod
    def from_json(cls, d):
        return cls(d["const"], {int(k): v for k, v in d["coeffs"].items()})


class DecisionPoly:
    """Polynomial in x whose coefficients are affine in the decision variables."""

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms: Mapping[Monomial, AffineExpr] | None = None):
        self.nvars = nvars
        clean = {}
        for m, a in (terms or {}).items():
            if len(m) != nvars:
                raise ValueError("monomial length mismatch")
            if not a.is_zero():
                clean[tuple(m)] = a
        self.terms = {m: clean[m] for m in sorted(clean, key=grlex_key)}

    @classmethod
    def lift(cls, p) -> "DecisionPoly":
        if isinstance(p, DecisionPoly):
            return p
        if isinstance(p, Polynomial):
            return cls(p.nvars, {m: AffineExpr(c) for m, c in p.items()})
        raise TypeError(f"cannot lift {type(p).__name__}")

    @classmethod
    def constant(cls, a: AffineExpr | float, nvars: int) -> "DecisionPoly":
        a = a if isinstance(a, AffineExpr) else AffineExpr(a)
        return cls(nvars, {(0,) * nvars: a})

    def variable_ids(self) -> set[int]:
        return {k for a in self.terms.values() for k in a.coeffs}

    def has_variables(self) -> bool:
        return any(a.coeffs for a in self.terms.values())

    @property
    def degree(self) -> int:
        return max((sum(m) for m in self.terms), default=-1)

    def support(self) -> list[Monomial]:
        return list(self.terms)

    def _coerce(self, other):
        if isinstance(other, DecisionPoly):
            if other.nvars != self.nvars:
                raise ValueError("nvars mismatch")
            return other
        if isinstance(other, Polynomial):
            if other.nvars != self.nvars:
                raise ValueError("nvars mismatch")
            return DecisionPoly.lift(other)
        if isinstance(other, (Real, np.floating)):
            return DecisionPoly.constant(float(other), self.nvars)
        if isinstance(other, AffineExpr):
            return DecisionPoly.constant(other, self.nvars)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        t = dict(self.terms)
        for m, a in other.terms.items():
            t[m] = t[m] + a if m in t else a
        return DecisionPoly(self.nvars, t)

    __radd__ = __add__

    def __neg__(self):
        return DecisionPoly(self.nvars, {m: -a for m, a in self.terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return other + (-self)

    def __mul__(self, other):
        if isinstance(other, (Real, np.floating)):
            return DecisionPoly(self.nvars, {m: a * float(other) for m, a in self.terms.items()})
        if isinstance(other, AffineExpr):
            other = DecisionPoly.constant(other, self.nvars)
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        if self.has_variables() and other.has_variables():
            raise BilinearityError(
                "product of two polynomials that both carry decision variables; "
                "fix one factor and alternate instead"
            )
        t: dict[Monomial, AffineExpr] = {}
        for ma, aa in self.terms.items():
            for mb, ab in other.terms.items():
                m = mono_mul(ma, mb)
                prod = aa * ab
                t[m] = t[m] + prod if m in t else prod
        return DecisionPoly(self.nvars, t)

    __rmul__ = __mul__

    def partial(self, i: int) -> "DecisionPoly":
        t = {}
        for m, a in self.terms.items():
            if m[i]:
                mm = list(m)
                mm[i] -= 1
                t[tuple(mm)] = a * float(m[i])
        return DecisionPoly(self.nvars, t)

    def value(self, values: Mapping[int, float]) -> Polynomial:
        return Polynomial(self.nvars, {m: a.value(values) for m, a in self.terms.items()})

    def coefficient(self, mono: Monomial) -> AffineExpr:
        return self.terms.get(tuple(mono), AffineExpr())

    def __repr__(self):
        return f"DecisionPoly({self.nvars}, {len(self.terms)} terms)"

    def to_json(self):
        return [{"exponents": list(m), **a.to_json()} for m, a in self.terms.items()]

    @classmethod
    def from_json(cls, nvars, recs):
        return cls(nvars, {tuple(r["exponents"]): AffineExpr.from_json(r) for r in recs})


def _as_decision(p, nvars):
    if isinstance(p, DecisionPoly):
        return p
    if isinstance(p, Polynomial):
        return DecisionPoly.lift(p)
    if isinstance(p, AffineExpr):
        return DecisionPoly.constant(p, nvars)
    return DecisionPoly.constant(float(p), nvars)


@dataclass
class Claim:
    """What a constraint certifies: ``target >= 0`` on the set
    ``{ineq_i >= 0} ∩ {eq_j = 0}``.  Used only for a posteriori sampling."""

    target: DecisionPoly
    ineqs: list = field(default_factory=list)
    eqs: list = field(default_factory=list)


@dataclass
class SosConstraint:
    expression: DecisionPoly
    basis: list[Monomial]
    floor: float = 0.0
    name: str = ""
    claim: Claim | None = None

    @property
    def kind(self) -> str:
        return "sos_with_floor" if self.floor else "sos"


def newton_basis(support: Iterable[Monomial], nvars: int) -> list[Monomial]:
    """Gram basis: monomials of degree <= ceil(deg/2) pruned to the half box hull.

    Any monomial of an SOS decomposition lies in half the Newton polytope,
    which sits inside the box ``min_i/2 <= z_i <= max_i/2`` and the degree
    band ``mindeg/2 <= |z| <= maxdeg/2``.
    """
    support = list(support)
    if not support:
        return []
    maxdeg = max(sum(m) for m in support)
    if maxdeg % 2:
        raise DegreeError(f"expression has odd top degree {maxdeg}; it cannot be SOS")
    mindeg = min(sum(m) for m in support)
    hi = [max(m[i] for m in support) for i in range(nvars)]
    lo = [min(m[i] for m in support) for i in range(nvars)]
    out = []
    for z in monomial_basis(nvars, math.ceil(maxdeg / 2)):
        d = sum(z)
        if 2 * d < mindeg or 2 * d > maxdeg:
            continue
        if any(2 * z[i] > hi[i] or 2 * z[i] < lo[i] for i in range(nvars)):
            continue
        out.append(z)
    return out


class SosProgram:
    """Declarative SOS program: max/min an affine objective subject to SOS
    membership, affine equalities and affine inequalities."""

    def __init__(self, nvars: int):
        self.nvars = nvars
        self.variables: list[CoeffVar] = []
        self.constraints: list[SosConstraint] = []
        self.equalities: list[AffineExpr] = []
        self.inequalities: list[AffineExpr] = []
        self.objective = AffineExpr()
        self.sense = "min"

    # variables

    def new_var(self, description: str = "") -> AffineExpr:
        v = CoeffVar(len(self.variables), description)
        self.variables.append(v)
        return AffineExpr.var(v)

    def decision_poly(
        self, degree: int, parity: str = "all", name: str = "p", min_degree: int = 0
    ) -> DecisionPoly:
        """Free polynomial with one fresh variable per basis monomial."""
        if degree < 0:
            raise ValueError("degree must be non-negative")
        if parity not in ("all", "even"):
            raise ValueError("parity must be 'all' or 'even'")
        terms = {}
        for m in monomial_basis(self.nvars, degree):
            d = sum(m)
            if d < min_degree or (parity == "even" and d % 2):
                continue
            terms[m] = self.new_var(f"{name}[{','.join(map(str, m))}]")
        return DecisionPoly(self.nvars, terms)

    def sos_poly(self, degree: int, name: str = "s") -> DecisionPoly:
        """Fresh polynomial constrained to be SOS (degree rounded down to even)."""
        degree -= degree % 2
        p = self.decision_poly(degree, name=name)
        self.add_sos(p, name=f"{name} in SOS", basis=monomial_basis(self.nvars, degree // 2))
        return p

    # constraints

    def add_sos(
        self,
        expr,
        floor: float = 0.0,
        basis: Sequence[Monomial] | None = None,
        name: str = "",
        claim: Claim | None = None,
    ) -> SosConstraint:
        e = _as_decision(expr, self.nvars)
        if basis is None:
            support = e.support()
            if floor and (0,) * self.nvars not in support:
                support = support + [(0,) * self.nvars]
            basis = newton_basis(support, self.nvars)
        c = SosConstraint(e, [tuple(m) for m in basis], float(floor), name or f"c{len(self.constraints)}", claim)
        if c.claim is None:
            c.claim = Claim(e - floor if floor else e)
        self.constraints.append(c)
        return c

    def add_equality(self, a: AffineExpr, rhs: float = 0.0) -> None:
        self.equalities.append(a - rhs)

    def add_nonneg(self, a: AffineExpr) -> None:
        self.inequalities.append(a)

    def set_objective(self, a: AffineExpr, sense: str = "max") -> None:
        if sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        self.objective = a
        self.sense = sense

    def used_variables(self) -> set[int]:
        ids = set(self.objective.coeffs)
        for c in self.constraints:
            ids |= c.expression.variable_ids()
        for a in self.equalities + self.inequalities:
            ids |= set(a.coeffs)
        return ids

    def to_json(self) -> str:
        return json.dumps(
            {
                "nvars": self.nvars,
                "variables": [{"id": v.id, "description": v.description} for v in self.variables],
                "constraints": [
                    {
                        "name": c.name,
                        "kind": c.kind,
                        "floor": c.floor,
                        "basis": [list(m) for m in c.basis],
                        "expression": c.expression.to_json(),
                    }
                    for c in self.constraints
                ],
                "equalities": [a.to_json() for a in self.equalities],
                "inequalities": [a.to_json() for a in self.inequalities],
                "objective": self.objective.to_json(),
                "sense": self.sense,
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "SosProgram":
        d = json.loads(text)
        prog = cls(d["nvars"])
        prog.variables = [CoeffVar(v["id"], v["description"]) for v in d["variables"]]
        for c in d["constraints"]:
            prog.add_sos(
                DecisionPoly.from_json(prog.nvars, c["expression"]),
                floor=c["floor"],
                basis=[tuple(m) for m in c["basis"]],
                name=c["name"],
            )
        prog.equalities = [AffineExpr.from_json(a) for a in d["equalities"]]
        prog.inequalities = [AffineExpr.from_json(a) for a in d["inequalities"]]
        prog.objective = AffineExpr.from_json(d["objective"])
        prog.sense = d["sense"]
        return prog


def decision_poly(prog: SosProgram, degree: int, parity: str = "all", name: str = "p") -> DecisionPoly:
    return prog.decision_poly(degree, parity, name)


def s_procedure(
    prog: SosProgram,
    p0,
    constraints: Sequence[Polynomial],
    multiplier_degrees: Sequence[int],
    name: str = "s-procedure",
) -> tuple[SosConstraint, list[DecisionPoly]]:
    """Certify ``{p_i >= 0 for all i} ⊆ {p0 >= 0}``.

    Adds SOS multipliers ``s_i`` and the constraint ``p0 - sum s_i p_i`` SOS.
    Multiplier degrees are mandatory; odd degrees are rounded down.
    """
    if len(constraints) != len(multiplier_degrees):
        raise ValueError("need one multiplier degree per constraint")
    p0 = _as_decision(p0, prog.nvars)
    if any(c.nvars != prog.nvars for c in constraints):
        raise ValueError("nvars mismatch")
    top = p0.degree
    for c, d in zip(constraints, multiplier_degrees):
        top = max(top, c.degree + d - d % 2)
    if top % 2:
        raise DegreeError(
            f"residual expression would have odd top degree {top}; raise a multiplier degree so an "
            "even-degree term dominates"
        )
    mults = [prog.sos_poly(d, name=f"{name}.s{i + 1}") for i, d in enumerate(multiplier_degrees)]
    expr = p0
    for s, c in zip(mults, constraints):
        expr = expr - s * c
    claim = Claim(p0, ineqs=list(constraints))
    con = prog.add_sos(expr, name=name, claim=claim)
    return con, mults


# compilation


@dataclass
class _Layout:
    var_index: dict[int, int]
    n_free: int
    n_ineq: int
    rows: list[tuple[int, Monomial | None]]


def _layout(prog: SosProgram) -> _Layout:
    used = sorted(prog.used_variables())
    return _Layout({v: k for k, v in enumerate(used)}, len(used), len(prog.inequalities), [])


def compile(prog: SosProgram) -> sdp_mod.SdpInstance:
    """Translate to a free block (decision variables), an LP block
    (inequality slacks) and one PSD block per SOS constraint."""
    lay = _layout(prog)
    nf = lay.n_free
    free_blk, slack_blk, blocks = _leading_blocks(lay)
    first_psd = len(blocks)
    A: list[tuple[int, int, int, int, float]] = []
    b: list[float] = []

    def add_var_terms(row, a: AffineExpr, sign: float):
        for vid, w in sorted(a.coeffs.items()):
            k = lay.var_index[vid]
            A.append((row, free_blk, k, k, sign * w))

    for ci, con in enumerate(prog.constraints):
        if not con.basis and not con.expression.terms and not con.floor:
            blocks.append(1)
            continue
        if not con.basis:
            raise DegreeError(f"constraint {con.name!r}: empty Gram basis for a nonzero expression")
        blocks.append(len(con.basis))
        blk = first_psd + ci
        gram_terms: dict[Monomial, list[tuple[int, int]]] = {}
        for i, zi in enumerate(con.basis):
            for j in range(i, len(con.basis)):
                gram_terms.setdefault(mono_mul(zi, con.basis[j]), []).append((i, j))
        monos = set(gram_terms) | set(con.expression.terms)
        if con.floor:
            monos.add((0,) * prog.nvars)
        for m in sorted(monos, key=grlex_key):
            row = len(b)
            a = con.expression.coefficient(m)
            const = a.const - (con.floor if not any(m) else 0.0)
            for i, j in gram_terms.get(m, []):
                A.append((row, blk, i, j, 1.0))
            add_var_terms(row, a, -1.0)
            b.append(const)
    for a in prog.equalities:
        row = len(b)
        add_var_terms(row, a, 1.0)
        b.append(-a.const)
    for q, a in enumerate(prog.inequalities):
        row = len(b)
        add_var_terms(row, a, 1.0)
        A.append((row, slack_blk, q, q, -1.0))
        b.append(-a.const)
    C = []
    for vid, w in sorted(prog.objective.coeffs.items()):
        if vid not in lay.var_index:
            continue
        k = lay.var_index[vid]
        C.append((free_blk, k, k, w))
    free = (free_blk,) if nf else ()
    return sdp_mod.SdpInstance(blocks, np.array(b), A, C, sense=prog.sense, free_blocks=free)


def _leading_blocks(lay):
    """(free block index, slack block index, leading block sizes)."""
    blocks = []
    free_blk = slack_blk = None
    if lay.n_free:
        free_blk = len(blocks)
        blocks.append(-lay.n_free)
    if lay.n_ineq:
        slack_blk = len(blocks)
        blocks.append(-lay.n_ineq)
    return free_blk, slack_blk, blocks


# certificates


@dataclass
class ConstraintCertificate:
    name: str
    basis: list[Monomial]
    gram: np.ndarray
    expression: Polynomial
    target: Polynomial | None = None
    ineqs: list[Polynomial] = field(default_factory=list)
    eqs: list[Polynomial] = field(default_factory=list)

    def gram_polynomial(self) -> Polynomial:
        t: dict[Monomial, float] = {}
        Q = self.gram
        for i, zi in enumerate(self.basis):
            for j, zj in enumerate(self.basis):
                if Q[i, j] != 0.0:
                    m = mono_mul(zi, zj)
                    t[m] = t.get(m, 0.0) + Q[i, j]
        return Polynomial(len(self.basis[0]) if self.basis else self.expression.nvars, t)

    def identity_residual(self) -> float:
        diff = self.expression - self.gram_polynomial()
        return diff.max_abs_coeff()

    def min_eig(self) -> float:
        if self.gram.size == 0:
            return 0.0
        return float(sla.eigvalsh(0.5 * (self.gram + self.gram.T)).min())


@dataclass
class GramCertificate:
    status: str
    values: dict[int, float]
    constraints: list[ConstraintCertificate]
    objective: float = float("nan")
    descriptions: dict[int, str] = field(default_factory=dict)
    # polynomials are written in z = x / coordinate_scale
    coordinate_scale: float = 1.0

    @property
    def residual(self) -> float:
        return max((c.identity_residual() for c in self.constraints), default=0.0)

    @property
    def min_eig(self) -> float:
        return min((c.min_eig() for c in self.constraints), default=0.0)

    def value_of(self, a: AffineExpr) -> float:
        return a.value(self.values)

    def poly(self, p: DecisionPoly) -> Polynomial:
        return p.value(self.values)

    def to_json(self) -> str:
        return json.dumps(
            {
                "status": self.status,
                "objective": self.objective,
                "coordinate_scale": self.coordinate_scale,
                "values": {str(k): v for k, v in sorted(self.values.items())},
                "constraints": [
                    {
                        "name": c.name,
                        "nvars": c.expression.nvars,
                        "basis": [list(m) for m in c.basis],
                        "gram": [float(v) for v in np.asarray(c.gram).reshape(-1)],
                        "expression": c.expression.to_records(),
                        "target": c.target.to_records() if c.target is not None else None,
                        "ineqs": [p.to_records() for p in c.ineqs],
                        "eqs": [p.to_records() for p in c.eqs],
                    }
                    for c in self.constraints
                ],
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "GramCertificate":
        d = json.loads(text)
        cons = []
        for c in d["constraints"]:
            n = c["nvars"]
            k = len(c["basis"])
            cons.append(
                ConstraintCertificate(
                    name=c["name"],
                    basis=[tuple(m) for m in c["basis"]],
                    gram=np.array(c["gram"], dtype=float).reshape(k, k),
                    expression=Polynomial.from_records(n, c["expression"]),
                    target=Polynomial.from_records(n, c["target"]) if c.get("target") is not None else None,
                    ineqs=[Polynomial.from_records(n, p) for p in c.get("ineqs", [])],
                    eqs=[Polynomial.from_records(n, p) for p in c.get("eqs", [])],
                )
            )
        return cls(
            d["status"],
            {int(k): v for k, v in d["values"].items()},
            cons,
            d.get("objective", float("nan")),
            coordinate_scale=d.get("coordinate_scale", 1.0),
        )


class NoCertificate(RuntimeError):
    def __init__(self, status: str, detail: str = ""):
        super().__init__(f"no certificate (solver status {status}) {detail}".strip())
        self.status = status


def recover(prog: SosProgram, sol: sdp_mod.SdpSolution) -> GramCertificate:
    if sol.status != sdp_mod.OPTIMAL:
        raise NoCertificate(sol.status)
    lay = _layout(prog)
    values = {v.id: 0.0 for v in prog.variables}
    free_blk, _, lead = _leading_blocks(lay)
    if free_blk is not None:
        d = np.diag(sol.X[free_blk])
        for vid, k in lay.var_index.items():
            values[vid] = float(d[k])
    first_psd = len(lead)
    cons = []
    for ci, con in enumerate(prog.constraints):
        Q = sol.X[first_psd + ci]
        Q = 0.5 * (Q + Q.T)
        if not con.basis:
            Q = np.zeros((0, 0))
        expr = con.expression.value(values)
        if con.floor:
            expr = expr - con.floor
        cl = con.claim
        cons.append(
            ConstraintCertificate(
                name=con.name,
                basis=list(con.basis),
                gram=Q,
                expression=expr,
                target=_resolve(cl.target, values) if cl else None,
                ineqs=[_resolve(p, values) for p in (cl.ineqs if cl else [])],
                eqs=[_resolve(p, values) for p in (cl.eqs if cl else [])],
            )
        )
    obj = prog.objective.value(values)
    return GramCertificate(sol.status, values, cons, obj, {v.id: v.description for v in prog.variables})


def _resolve(p, values) -> Polynomial:
    if isinstance(p, DecisionPoly):
        return p.value(values)
    return p


@dataclass
class VerificationReport:
    passed: bool
    residual: float
    min_eig: float
    reason: str = ""


def verify_certificate(
    cert: GramCertificate, tol_identity: float = TOL_IDENTITY, tol_eig: float = TOL_EIG
) -> VerificationReport:
    """Recompute identity residuals and Gram eigenvalues from the stored data."""
    res = 0.0
    me = math.inf
    reasons = []
    for c in cert.constraints:
        r = c.identity_residual()
        e = c.min_eig()
        res, me = max(res, r), min(me, e)
        if not np.all(np.isfinite(c.gram)):
            reasons.append(f"{c.name}: non-finite Gram entries")
        if r > tol_identity:
            reasons.append(f"{c.name}: identity residual {r:.3g} > {tol_identity:g}")
        if e < -tol_eig:
            reasons.append(f"{c.name}: Gram min eigenvalue {e:.3g} < {-tol_eig:g}")
    if me == math.inf:
        me = 0.0
    return VerificationReport(not reasons, res, me, "; ".join(reasons))


def solve_program(prog: SosProgram, tol: float = 1e-8, max_iter: int = 200_000, **kw):
    """Compile, solve, and recover.  Returns (certificate or None, sdp solution)."""
    inst = compile(prog)
    sol = sdp_mod.solve(inst, tol=tol, max_iter=max_iter, **kw)
    if sol.status != sdp_mod.OPTIMAL:
        return None, sol
    return recover(prog, sol), sol


# a posteriori checks


def _project_to_variety(X, eqs, grads, iters=30, tol=1e-10):
    """Batched Gauss-Newton steps onto {eq_j(x) = 0}.

    Returns the projected points and a mask of those that converged.
    """
    from .poly import PolyEvaluator

    ev_r = PolyEvaluator(eqs)
    ev_j = PolyEvaluator([g for row in grads for g in row])
    k, n = len(eqs), X.shape[1]
    X = X.copy()
    for _ in range(iters):
        r = ev_r(X)
        if np.max(np.abs(r)) < tol:
            break
        J = ev_j(X).reshape(len(X), k, n)
        X = X - np.einsum("pnk,pk->pn", np.linalg.pinv(J), r)
        X[~np.isfinite(X)] = np.inf
    r = ev_r(X)
    ok = np.all(np.isfinite(X), axis=1) & (np.max(np.abs(np.nan_to_num(r, nan=np.inf)), axis=1) < 1e-8)
    return X, ok


def sampling_check(
    c: ConstraintCertificate,
    n_samples: int = 10_000,
    box: float = 10.0,
    seed: int = 0,
    tol: float = 1e-6,
    max_proposals: int = 2_000_000,
) -> tuple[bool, float, int]:
    """Sample points of the certified set and check ``target >= -tol``.

    The tolerance is scaled by the magnitude sum |c_a x^a| of the target at
    each point, so far-out samples of high-degree targets are not judged on
    absolute rounding.  Returns (ok, worst normalized value, samples used).
    """
    from .poly import PolyEvaluator

    target = c.target if c.target is not None else c.expression
    n = target.nvars
    rng = np.random.default_rng(seed)
    abs_target = Polynomial(n, {m: abs(v) for m, v in target.items()})
    ev = PolyEvaluator([target, abs_target] + list(c.ineqs))
    worst = math.inf
    used = 0
    proposals = 0
    eqs = list(c.eqs)
    grads = [[e.partial(i) for i in range(n)] for e in eqs]
    while used < n_samples and proposals < max_proposals:
        batch = min(20_000, max_proposals - proposals)
        X = rng.uniform(-box, box, size=(batch, n))
        proposals += batch
        if eqs:
            with np.errstate(all="ignore"):
                X, ok = _project_to_variety(X, eqs, grads)
            X = X[ok & np.all(np.abs(X) <= box, axis=1)]
            if len(X) == 0:
                continue
        vals = ev(X)
        ok_set = np.all(vals[:, 2:] >= 0, axis=1) if vals.shape[1] > 2 else np.ones(len(X), bool)
        X_in = vals[ok_set]
        if len(X_in) == 0:
            continue
        take = X_in[: n_samples - used]
        norm = take[:, 0] / np.maximum(1.0, take[:, 1])
        worst = min(worst, float(norm.min()))
        used += len(take)
    return worst >= -tol, worst, used
