"""SOS synthesis of barrier multipliers, robustness margins and ROA estimates.

Every program here is convex once the bilinear partners are fixed; the
bilinear ones (ROA estimation, barrier search) alternate between two convex
halves and keep a round only if it improves the margin.  No margin is ever
reported without a Gram certificate that passes ``verify_certificate``.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from . import sos
from .cbf_qp import SystemModel
from .poly import PolyEvaluator, PolyMatrix, Polynomial, lie_derivative, monomial_basis, variables
from .sos import AffineExpr, Claim, DecisionPoly, GramCertificate, SosProgram

logger = logging.getLogger(__name__)

REL_IMPROVEMENT = 1e-4


@dataclass(frozen=True)
class DegreeBudget:
    deg_lambda: int = 2
    deg_lambda1: int = 3
    deg_lambda2: int = 2
    deg_h: int = 2
    deg_ball: int | None = None  # None: match the top degree of the certified expression

    def __post_init__(self):
        for k in ("deg_lambda", "deg_lambda1", "deg_lambda2", "deg_h"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be non-negative")


@dataclass(frozen=True)
class DomainBall:
    radius: float | None = None

    def __post_init__(self):
        if self.radius is not None and self.radius <= 0:
            raise ValueError("ball radius must be positive")

    @property
    def present(self) -> bool:
        return self.radius is not None

    def poly(self, nvars: int) -> Polynomial:
        xs = variables(nvars)
        return self.radius**2 - sum((x * x for x in xs), Polynomial.zero(nvars))


GLOBAL = DomainBall(None)


def scaled_model(model: SystemModel, s: float) -> SystemModel:
    """The same system in coordinates z = x / s.

    Every filter ingredient of the result evaluated at z equals the original
    one at x = s z, so SOS programs over the unit ball stay well scaled.
    """
    if s == 1.0:
        return model
    return model.with_(
        f=tuple(q.rescaled(s) / s for q in model.f),
        g=PolyMatrix([[q.rescaled(s) / s for q in row] for row in model.g.entries()]),
        u_nom=tuple(q.rescaled(s) for q in model.u_nom),
        V=model.V.rescaled(s),
        h=model.h.rescaled(s),
        lam=model.lam.rescaled(s),
    )


def _scale_for(ball: DomainBall, scale: float | None) -> float:
    if scale is not None:
        if scale <= 0:
            raise ValueError("scale must be positive")
        return float(scale)
    return float(ball.radius) if ball.present else 1.0


def _in_z(ball: DomainBall, s: float) -> DomainBall:
    return DomainBall(ball.radius / s) if ball.present else ball


def _back(p: Polynomial | None, s: float) -> Polynomial | None:
    return None if p is None else p.rescaled(1.0 / s)


def _tag(cert: GramCertificate | None, s: float):
    if cert is not None:
        cert.coordinate_scale = s
    return cert


def _sum(ps, nvars):
    out = Polynomial.zero(nvars)
    for p in ps:
        out = out + p
    return out


def _add_ball_term(prog: SosProgram, expr, ball: DomainBall, deg_ball: int | None, name: str):
    """expr - sigma * (R^2 - |x|^2) with a fresh SOS sigma; returns (expr, sigma)."""
    if not ball.present:
        return expr, None
    d = deg_ball
    if d is None:
        d = max(_top_degree(expr) - 2, 0)
    sigma = prog.sos_poly(d, name=f"{name}.ball")
    return expr - sigma * ball.poly(prog.nvars), sigma


def _top_degree(e) -> int:
    return e.degree


def _certified(cert: GramCertificate | None):
    if cert is None:
        return None, None
    rep = sos.verify_certificate(cert)
    return (cert if rep.passed else None), rep


TIGHTEST_TOL = 1e-12


def _solve_certified(prog: SosProgram, tol: float, max_iter: int = 200_000):
    """Solve and verify; a converged solve whose certificate misses the
    residual threshold is retried with a 100x tighter solver tolerance."""
    while True:
        cert, sol = sos.solve_program(prog, tol=tol, max_iter=max_iter)
        checked, rep = _certified(cert)
        if checked is not None or cert is None or tol / 100 < TIGHTEST_TOL:
            return checked, sol, rep
        tol /= 100


@dataclass
class RobustCbfResult:
    status: str
    eta: float
    h: Polynomial | None = None
    lam: Polynomial | None = None
    lam1: list[Polynomial] = field(default_factory=list)
    lam2: Polynomial | None = None
    certificate: GramCertificate | None = None
    rounds: int = 0
    history: list[float] = field(default_factory=list)
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.certificate is not None

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "eta": self.eta,
            "h": self.h.to_records() if self.h is not None else None,
            "lambda": self.lam.to_records() if self.lam is not None else None,
            "lambda1": [p.to_records() for p in self.lam1],
            "lambda2": self.lam2.to_records() if self.lam2 is not None else None,
            "rounds": self.rounds,
            "history": self.history,
            "detail": self.detail,
        }


@dataclass
class RoaResult:
    status: str
    eta: float
    lam: Polynomial | None = None
    lam1: Polynomial | None = None
    lam2: Polynomial | None = None
    certificate: GramCertificate | None = None
    rounds: int = 0
    history: list[float] = field(default_factory=list)
    weight: float | None = None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.certificate is not None and self.eta > 0

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "eta": self.eta,
            "lambda": self.lam.to_records() if self.lam is not None else None,
            "lambda1": self.lam1.to_records() if self.lam1 is not None else None,
            "lambda2": self.lam2.to_records() if self.lam2 is not None else None,
            "rounds": self.rounds,
            "history": self.history,
            "weight": self.weight,
            "detail": self.detail,
        }


# robustness margin


def _lambda_var(prog: SosProgram, deg: int, eps: float, lambda_origin: float | None, name="lambda"):
    """Multiplier lambda with lambda - eps SOS (and lambda(0) pinned if asked)."""
    n = prog.nvars
    if deg == 0 and lambda_origin is not None:
        lam = DecisionPoly.lift(Polynomial.constant(lambda_origin, n))
    else:
        lam = prog.decision_poly(deg - deg % 2, name=name)
        if lambda_origin is not None:
            prog.add_equality(lam.coefficient((0,) * n), lambda_origin)
    prog.add_sos(lam, floor=eps, name=f"{name} - eps in SOS", basis=monomial_basis(n, (deg - deg % 2) // 2))
    return lam


def _margin_program(
    model: SystemModel,
    h,
    lam,
    lam1,
    lam2,
    c: Polynomial | None,
    ball: DomainBall,
    budget: DegreeBudget,
    eps: float,
    lambda_origin: float | None,
    fixed: str,
    h_anchor: Polynomial | None = None,
    trust: float | None = None,
):
    """Build the barrier-margin program with one group fixed.

    fixed == "h": h is a Polynomial; lambda, lambda1, lambda2 are unknowns.
    fixed == "multipliers": lambda, lambda1, lambda2 are Polynomials; h is unknown.
    """
    n, m = model.n, model.m
    prog = SosProgram(n)
    eta = prog.new_var("eta")
    if fixed == "h":
        lam_d = _lambda_var(prog, budget.deg_lambda, eps, lambda_origin)
        lam1_d = [prog.decision_poly(budget.deg_lambda1, name=f"lambda1_{j}") for j in range(m)]
        h_d = DecisionPoly.lift(h)
    else:
        lam_d = DecisionPoly.lift(lam)
        prog.add_sos(lam_d, floor=eps, name="lambda - eps in SOS", basis=monomial_basis(n, max(lam.degree, 0) // 2))
        lam1_d = [DecisionPoly.lift(q) for q in lam1]
        h_d = prog.decision_poly(budget.deg_h, name="h")
        anchor = h_anchor if h_anchor is not None else Polynomial.zero(n)
        prog.add_equality(h_d.coefficient((0,) * n), anchor.coefficient((0,) * n))
        if trust is not None:
            for mono, a in h_d.terms.items():
                if not any(mono):
                    continue
                ref = anchor.coefficient(mono)
                rad = trust * (1.0 + abs(ref))
                prog.add_nonneg(a - (ref - rad))
                prog.add_nonneg((ref + rad) - a)
    Lfh = lie_derivative(model.f, h_d)
    Lgh = [lie_derivative(model.g.col(j), h_d) for j in range(m)]
    target = Lfh + lam_d * h_d - eta
    expr = target
    for q, b in zip(lam1_d, Lgh):
        expr = expr + q * b
    expr, sigma = _add_ball_term(prog, expr, ball, budget.deg_ball, "margin")
    claim = Claim(target, ineqs=[ball.poly(n)] if ball.present else [], eqs=list(Lgh))
    prog.add_sos(expr, name="margin", claim=claim)
    lam2_d = None
    if c is not None:
        if fixed == "h":
            lam2_d = prog.sos_poly(budget.deg_lambda2, name="lambda2")
        else:
            lam2_d = DecisionPoly.lift(lam2)
        prog.add_sos(c - lam2_d * h_d, name="containment", claim=Claim(DecisionPoly.lift(c), ineqs=[h_d]))
    prog.set_objective(eta, "max")
    return prog, {"eta": eta, "lam": lam_d, "lam1": lam1_d, "lam2": lam2_d, "h": h_d}


def _run_margin(prog, handles, tol, max_iter):
    cert, sol, rep = _solve_certified(prog, tol, max_iter)
    if cert is None:
        detail = sol.status if rep is None else f"certificate rejected: {rep.reason}"
        return None, sol.status, detail
    vals = {
        "eta": cert.value_of(handles["eta"]),
        "lam": cert.poly(handles["lam"]),
        "lam1": [cert.poly(q) for q in handles["lam1"]],
        "lam2": cert.poly(handles["lam2"]) if handles["lam2"] is not None else None,
        "h": cert.poly(handles["h"]),
        "cert": cert,
    }
    return vals, sol.status, ""


def margin_fixed_h(
    model: SystemModel,
    h: Polynomial | None = None,
    budget: DegreeBudget = DegreeBudget(),
    ball: DomainBall = GLOBAL,
    eps: float = sos.DEFAULT_EPS,
    lambda_origin: float | None = 1.0,
    c: Polynomial | None = None,
    tol: float = 1e-8,
    max_iter: int = 200_000,
    scale: float | None = None,
) -> RobustCbfResult:
    """Largest eta with L_f h + lambda h - eta + lambda1 L_g h SOS (on the ball).

    ``lambda_origin`` pins lambda(0); with lambda free the margin grows without
    bound wherever h stays positive on {L_g h = 0}.  Degree 0 with the pin is
    the linear class-K_e baseline alpha(r) = lambda_origin * r.

    The program is solved in z = x / scale (default: the ball radius); the
    returned polynomials are in x, the certificate in z.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    h = model.h if h is None else h
    s = _scale_for(ball, scale)
    res = _margin_z(scaled_model(model, s), h.rescaled(s), _in_z(ball, s), budget, eps, lambda_origin,
                    None if c is None else c.rescaled(s), tol, max_iter)
    return _result_to_x(res, s)


def _result_to_x(res: "RobustCbfResult", s: float) -> "RobustCbfResult":
    res.h = _back(res.h, s)
    res.lam = _back(res.lam, s)
    res.lam1 = [_back(q, s) for q in res.lam1]
    res.lam2 = _back(res.lam2, s)
    _tag(res.certificate, s)
    return res


def _margin_z(model, h, ball, budget, eps, lambda_origin, c, tol, max_iter) -> "RobustCbfResult":
    prog, handles = _margin_program(model, h, None, None, None, c, ball, budget, eps, lambda_origin, fixed="h")
    vals, status, detail = _run_margin(prog, handles, tol, max_iter)
    if vals is None:
        return RobustCbfResult(status=status, eta=float("nan"), h=h, detail=detail)
    return RobustCbfResult(
        status="optimal",
        eta=vals["eta"],
        h=h,
        lam=vals["lam"],
        lam1=vals["lam1"],
        lam2=vals["lam2"],
        certificate=vals["cert"],
        history=[vals["eta"]],
    )


def _improved(new: float, old: float) -> bool:
    return new > old + REL_IMPROVEMENT * max(1.0, abs(old))


def search_robust_cbf(
    model: SystemModel,
    c: Polynomial | None = None,
    budget: DegreeBudget = DegreeBudget(),
    ball: DomainBall = GLOBAL,
    eps: float = sos.DEFAULT_EPS,
    init_h: Polynomial | None = None,
    max_rounds: int = 20,
    lambda_origin: float | None = 1.0,
    trust: float = 0.1,
    tol: float = 1e-8,
    max_iter: int = 200_000,
    scale: float | None = None,
) -> RobustCbfResult:
    """Alternate (h fixed -> multipliers) and (multipliers fixed -> h).

    Each h step stays inside a box of relative size ``trust`` around the
    current h and keeps h(0) fixed; a round is kept only if eta improves.
    """
    s = _scale_for(ball, scale)
    h = model.h if init_h is None else init_h
    best = _search_z(
        scaled_model(model, s), None if c is None else c.rescaled(s), budget, _in_z(ball, s), eps,
        h.rescaled(s), max_rounds, lambda_origin, trust, tol, max_iter,
    )
    return _result_to_x(best, s)


def _search_z(model, c, budget, ball, eps, h, max_rounds, lambda_origin, trust, tol, max_iter):
    res = _margin_z(model, h, ball, budget, eps, lambda_origin, c, tol, max_iter)
    if not res.ok:
        raise RuntimeError(f"init_h not a certifiable CBF at this budget ({res.status}: {res.detail})")
    best = res
    history = [res.eta]
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        prog, handles = _margin_program(
            model, None, best.lam, best.lam1, best.lam2, c, ball, budget, eps, lambda_origin,
            fixed="multipliers", h_anchor=best.h, trust=trust,
        )
        vals, status, detail = _run_margin(prog, handles, tol, max_iter)
        if vals is None or not _improved(vals["eta"], best.eta):
            logger.info("round %d (h step) did not improve: %s", rounds, detail or status)
            break
        cand_h = vals["h"]
        res_a = _margin_z(model, cand_h, ball, budget, eps, lambda_origin, c, tol, max_iter)
        if res_a.ok and res_a.eta >= vals["eta"] - 1e-9 * max(1.0, abs(vals["eta"])):
            cand = res_a
        else:
            cand = RobustCbfResult(
                "optimal", vals["eta"], cand_h, best.lam, best.lam1, best.lam2, vals["cert"],
            )
        if not _improved(cand.eta, best.eta):
            break
        best = cand
        history.append(cand.eta)
    best.rounds = rounds if max_rounds else 0
    best.history = history
    return best


# region of attraction


def _roa_pieces(model: SystemModel):
    n = model.n
    b1, b2 = model.b1_polys, model.b2_polys
    nb1 = _sum((q * q for q in b1), n)
    nb2 = _sum((q * q for q in b2), n)
    cross = _sum((q1 * q2 for q1, q2 in zip(b1, b2)), n)
    return nb1, nb2, cross


def _roa_program(model, lam, lam1, lam2, budget, eps, fixed, weight=0.0):
    n = model.n
    prog = SosProgram(n)
    eta = prog.new_var("eta")
    nb1, nb2, cross = _roa_pieces(model)
    F_V = model.F_V_poly
    Lfh = model.Lfh_poly
    if fixed == "lambda":
        lam_d = DecisionPoly.lift(lam)
        prog.add_sos(lam_d, floor=eps, name="lambda - eps in SOS", basis=monomial_basis(n, max(lam.degree, 0) // 2))
        l1 = prog.sos_poly(budget.deg_lambda1, name="lambda1")
        l2 = prog.sos_poly(budget.deg_lambda2, name="lambda2")
    else:
        d = budget.deg_lambda - budget.deg_lambda % 2
        lam_d = prog.decision_poly(d, name="lambda")
        prog.add_sos(lam_d, floor=eps, name="lambda - eps in SOS", basis=monomial_basis(n, d // 2))
        l1, l2 = DecisionPoly.lift(lam1), DecisionPoly.lift(lam2)
    F_lam = Lfh + lam_d * model.h
    A = F_V * nb1 - F_lam * cross
    B = F_V * cross - F_lam * (nb2 + 1.0 / model.p)
    # (1 + weight V)(V - eta) >= l1 A + l2 B >= 0 on the region gives V >= eta there;
    # the weight lets the quadratic V dominate the quartic region polynomials
    target = DecisionPoly.lift(model.V) - eta
    expr = target * (1.0 + weight * model.V) - l1 * A - l2 * B
    prog.add_sos(expr, name="roa", claim=Claim(target, ineqs=[A, B]))
    prog.set_objective(eta, "max")
    return prog, {"eta": eta, "lam": lam_d, "lam1": l1, "lam2": l2}


def check_clf_condition(model: SystemModel, ball: DomainBall = GLOBAL, tol=1e-8) -> bool:
    """SOS check that -(L_{f'} V + gamma(V)) is nonnegative (on the ball)."""
    prog = SosProgram(model.n)
    expr, _ = _add_ball_term(prog, DecisionPoly.lift(-model.F_V_poly), ball, None, "clf")
    prog.add_sos(expr, name="clf", claim=Claim(DecisionPoly.lift(-model.F_V_poly), ineqs=[ball.poly(model.n)] if ball.present else []))
    cert, _, _ = _solve_certified(prog, tol)
    return cert is not None


ROA_WEIGHTS = (0.1, 1.0, 10.0, 100.0)


def estimate_roa(
    model: SystemModel,
    budget: DegreeBudget = DegreeBudget(deg_lambda=2, deg_lambda1=0, deg_lambda2=0),
    eps: float = sos.DEFAULT_EPS,
    max_rounds: int = 20,
    weight: float | None = None,
    tol: float = 1e-8,
    max_iter: int = 200_000,
) -> RoaResult:
    """Largest V-sublevel set kept clear of the doubly-active filter region.

    Certifies (1 + w V)(V - eta) - lambda1 A - lambda2 B in SOS, where
    {A >= 0, B >= 0} describes the region in which both filter constraints
    are active.  ``weight`` fixes w; by default the best of ``ROA_WEIGHTS``
    in the first round is kept for the remaining rounds.
    """
    if model.variant != "modified":
        raise ValueError("ROA estimation is defined for the modified filter")
    if not check_clf_condition(model, tol=tol):
        warnings.warn("u_nom does not certifiably satisfy the CLF condition; the estimate may be void")
    n = model.n
    lam = Polynomial.constant(1.0, n)

    def run(prog, handles):
        cert, sol, rep = _solve_certified(prog, tol, max_iter)
        if cert is None:
            return None, sol.status if rep is None else rep.reason
        vals = {k: (cert.value_of(v) if isinstance(v, AffineExpr) else cert.poly(v)) for k, v in handles.items()}
        vals["cert"] = cert
        return vals, ""

    best, w_best, detail = None, None, ""
    for w in (weight,) if weight is not None else ROA_WEIGHTS:
        prog, handles = _roa_program(model, lam, None, None, budget, eps, fixed="lambda", weight=w)
        vals, why = run(prog, handles)
        logger.info("roa weight %g: %s", w, why or vals["eta"])
        if vals is not None and (best is None or vals["eta"] > best["eta"]):
            best, w_best = vals, w
        detail = detail or why
    if best is None:
        return RoaResult(status="infeasible", eta=0.0, lam=lam, detail=f"no certificate: {detail}")
    history = [best["eta"]]
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        progB, hB = _roa_program(model, None, best["lam1"], best["lam2"], budget, eps, fixed="multipliers", weight=w_best)
        vB, detail = run(progB, hB)
        if vB is None or not _improved(vB["eta"], best["eta"]):
            break
        progA, hA = _roa_program(model, vB["lam"], None, None, budget, eps, fixed="lambda", weight=w_best)
        vA, _ = run(progA, hA)
        cand = vA if vA is not None and vA["eta"] >= vB["eta"] else vB
        if not _improved(cand["eta"], best["eta"]):
            break
        best = cand
        history.append(cand["eta"])
    status = "optimal" if best["eta"] > 0 else "trivial"
    return RoaResult(
        status=status,
        eta=max(best["eta"], 0.0) if status == "optimal" else 0.0,
        lam=best["lam"],
        lam1=best["lam1"],
        lam2=best["lam2"],
        certificate=best["cert"],
        rounds=rounds,
        history=history,
        weight=w_best,
        detail="" if status == "optimal" else "no positive level certified",
    )


# validity checks


@dataclass
class CheckReport:
    valid: bool
    sos_certified: bool
    witnesses: list[tuple[list[float], float]] = field(default_factory=list)
    certificate: GramCertificate | None = None
    detail: str = ""

    def to_dict(self):
        return {
            "valid": self.valid,
            "sos_certified": self.sos_certified,
            "witnesses": [{"x": list(map(float, x)), "value": float(v)} for x, v in self.witnesses],
            "detail": self.detail,
        }


def _search_variety_min(
    objective: Polynomial,
    eqs: Sequence[Polynomial],
    ineqs: Sequence[Polynomial],
    radius: float,
    grid: int = 41,
    refine: int = 40,
):
    """Dense grid + Gauss-Newton projection + SLSQP refinement of
    min objective s.t. eqs = 0, ineqs >= 0, |x|_inf <= radius."""
    n = objective.nvars
    axes = [np.linspace(-radius, radius, grid)] * n
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    grads = [[e.partial(i) for i in range(n)] for e in eqs]
    if eqs:
        with np.errstate(all="ignore"):
            pts, ok = sos._project_to_variety(pts, list(eqs), grads)
        pts = pts[ok]
    pts = pts[np.all(np.abs(pts) <= radius, axis=1)]
    if ineqs and len(pts):
        pts = pts[np.all(PolyEvaluator(list(ineqs))(pts) >= 0, axis=1)]
    vals = PolyEvaluator([objective])(pts)[:, 0] if len(pts) else np.zeros(0)
    cand = [(float(v), x) for v, x in zip(vals, pts)]
    cand.sort(key=lambda t: t[0])
    obj_grad = objective.gradient()
    cons = [{"type": "eq", "fun": (lambda x, e=e: e(x)), "jac": (lambda x, g=g: np.array([q(x) for q in g]))} for e, g in zip(eqs, grads)]
    cons += [{"type": "ineq", "fun": (lambda x, q=q: q(x))} for q in ineqs]
    out = []
    for val, x in cand[:refine]:
        r = minimize(
            lambda z: objective(z),
            x,
            jac=lambda z: np.array([q(z) for q in obj_grad]),
            constraints=cons,
            bounds=[(-radius, radius)] * n,
            method="SLSQP",
            options={"maxiter": 200, "ftol": 1e-12},
        )
        z = r.x if r.success else x
        if all(abs(e(z)) <= 1e-8 for e in eqs) and all(q(z) >= -1e-9 for q in ineqs):
            out.append((list(z), objective(z)))
        else:
            out.append((list(x), val))
    out.sort(key=lambda t: t[1])
    return out


def _dedup(points, tol=1e-6):
    out = []
    for x, v in points:
        if all(np.linalg.norm(np.subtract(x, y)) > tol for y, _ in out):
            out.append((x, v))
    return out


def _no_cert_detail(sol, rep) -> str:
    return f"no SOS certificate ({sol.status}{'; ' + rep.reason if rep else ''})"


def _cbf_sos(model: SystemModel, ball: DomainBall, budget: DegreeBudget, tol: float):
    n, m = model.n, model.m
    Lgh = list(model.b1_polys)
    target = lie_derivative(model.f, model.h) + model.lam * model.h
    prog = SosProgram(n)
    lam1 = [prog.decision_poly(budget.deg_lambda1, name=f"lambda1_{j}") for j in range(m)]
    expr = DecisionPoly.lift(target)
    for q, b in zip(lam1, Lgh):
        expr = expr + q * b
    expr, _ = _add_ball_term(prog, expr, ball, budget.deg_ball, "cbf")
    ineqs = [ball.poly(n)] if ball.present else []
    prog.add_sos(expr, name="cbf", claim=Claim(DecisionPoly.lift(target), ineqs=ineqs, eqs=Lgh))
    cert, sol, rep = _solve_certified(prog, tol)
    return cert, ("" if cert is not None else _no_cert_detail(sol, rep))


def verify_cbf(
    model: SystemModel,
    ball: DomainBall = GLOBAL,
    budget: DegreeBudget = DegreeBudget(),
    search_radius: float = 20.0,
    tol: float = 1e-8,
    scale: float | None = None,
) -> CheckReport:
    """Is L_f h + lambda h >= 0 wherever L_g h = 0?  SOS proof plus a witness search.

    Valid means a certificate exists and the search found no violating point.
    """
    s = _scale_for(ball, scale)
    cert, detail = _cbf_sos(scaled_model(model, s), _in_z(ball, s), budget, tol)
    _tag(cert, s)
    target = lie_derivative(model.f, model.h) + model.lam * model.h
    ineqs = [ball.poly(model.n)] if ball.present else []
    radius = ball.radius if ball.present else search_radius
    found = _search_variety_min(target, list(model.b1_polys), ineqs, radius)
    witnesses = _dedup([(x, v) for x, v in found if v < -1e-9])[:10]
    return CheckReport(
        valid=cert is not None and not witnesses,
        sos_certified=cert is not None,
        witnesses=witnesses,
        certificate=cert,
        detail=detail,
    )


def _cbc_sos(model: SystemModel, u_poly, ball: DomainBall, budget: DegreeBudget, tol: float):
    n = model.n
    hdot = lie_derivative(model.f, model.h) + _sum((b * u for b, u in zip(model.b1_polys, u_poly)), n)
    prog = SosProgram(n)
    lam = prog.sos_poly(budget.deg_lambda, name="lambda")
    expr = DecisionPoly.lift(hdot) + lam * model.h
    expr, _ = _add_ball_term(prog, expr, ball, budget.deg_ball, "cbc")
    ineqs = [-model.h] + ([ball.poly(n)] if ball.present else [])
    prog.add_sos(expr, name="cbc", claim=Claim(DecisionPoly.lift(hdot), ineqs=ineqs))
    cert, sol, rep = _solve_certified(prog, tol)
    return cert, ("" if cert is not None else _no_cert_detail(sol, rep))


def cbc_check(
    model: SystemModel,
    u_poly: Sequence[Polynomial],
    ball: DomainBall = GLOBAL,
    budget: DegreeBudget = DegreeBudget(),
    search_radius: float = 20.0,
    tol: float = 1e-8,
    scale: float | None = None,
) -> CheckReport:
    """Certificate that L_f h + L_g h u + lambda h is SOS for some SOS lambda.

    Witnesses are points of {h = 0} where the closed-loop h decreases.
    """
    u_poly = list(u_poly)
    if len(u_poly) != model.m:
        raise ValueError(f"u_poly needs {model.m} entries")
    s = _scale_for(ball, scale)
    cert, detail = _cbc_sos(scaled_model(model, s), [u.rescaled(s) for u in u_poly], _in_z(ball, s), budget, tol)
    _tag(cert, s)
    hdot = lie_derivative(model.f, model.h) + _sum((b * u for b, u in zip(model.b1_polys, u_poly)), model.n)
    radius = ball.radius if ball.present else search_radius
    ineqs = [ball.poly(model.n)] if ball.present else []
    found = _search_variety_min(hdot, [model.h], ineqs, radius, grid=31, refine=20)
    witnesses = _dedup([(x, v) for x, v in found if v < -1e-9])[:10]
    return CheckReport(
        valid=cert is not None and not witnesses,
        sos_certified=cert is not None,
        witnesses=witnesses,
        certificate=cert,
        detail=detail,
    )


def result_json(result) -> str:
    d = result.to_dict()
    if result.certificate is not None:
        d["certificate"] = json.loads(result.certificate.to_json())
    return json.dumps(d, indent=1)
