"""Closed-loop simulation of the filtered system with safety and stability monitors."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import jsonio
from .cbf_qp import REGIONS, SystemModel, solve_filter_batch
from .poly import PolyEvaluator, PolyMatrix, Polynomial

SIGNALS = ("constant", "sinusoidal", "random", "worst_case")


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class DisturbanceModel:
    """w(t) entering as x' = ... + map(x) w with |w| <= bound.

    ``constant`` pushes along ``direction``; ``sinusoidal`` scales it by
    sin(2 pi frequency t); ``random`` draws a fresh unit direction every
    ``hold`` seconds from ``seed``; ``worst_case`` points against grad h.
    """

    map: PolyMatrix
    bound: float
    signal: str = "constant"
    direction: tuple[float, ...] | None = None
    frequency: float = 1.0
    hold: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.bound < 0:
            raise ValueError("disturbance bound must be non-negative")
        if self.signal not in SIGNALS:
            raise ValueError(f"signal must be one of {SIGNALS}")
        if self.hold <= 0:
            raise ValueError("hold must be positive")

    @property
    def width(self) -> int:
        return self.map.shape[1]

    def _unit_direction(self) -> np.ndarray:
        d = np.zeros(self.width) if self.direction is None else np.asarray(self.direction, dtype=float)
        if self.direction is None:
            d[0] = 1.0
        nd = np.linalg.norm(d)
        if nd == 0:
            raise ValueError("direction must be nonzero")
        return d / nd

    def _random_direction(self, k: int) -> np.ndarray:
        v = np.random.default_rng([self.seed, k]).standard_normal(self.width)
        return v / np.linalg.norm(v)


class _Disturbance:
    """Evaluates map(x) and w(t, x) for a batch of states."""

    def __init__(self, dm: DisturbanceModel, model: SystemModel):
        self.dm = dm
        n, w = dm.map.shape
        if n != model.n:
            raise ValueError(f"disturbance map has {n} rows, model has {model.n} states")
        self.map_ev = PolyEvaluator(dm.map.flat())
        self.grad_h = PolyEvaluator(model.h.gradient())
        self.n, self.w = n, w
        self._cache: dict[int, np.ndarray] = {}

    def term(self, t: float, X: np.ndarray) -> np.ndarray:
        dm = self.dm
        N = X.shape[0]
        P = self.map_ev(X).reshape(N, self.n, self.w)
        if dm.bound == 0:
            return np.zeros((N, self.n))
        if dm.signal == "constant":
            W = np.broadcast_to(dm.bound * dm._unit_direction(), (N, self.w))
        elif dm.signal == "sinusoidal":
            W = np.broadcast_to(dm.bound * math.sin(2 * math.pi * dm.frequency * t) * dm._unit_direction(), (N, self.w))
        elif dm.signal == "random":
            k = int(math.floor(t / dm.hold + 1e-12))
            if k not in self._cache:
                self._cache[k] = dm._random_direction(k)
            W = np.broadcast_to(dm.bound * self._cache[k], (N, self.w))
        else:
            Lph = np.einsum("ni,niw->nw", self.grad_h(X), P)
            nrm = np.linalg.norm(Lph, axis=1, keepdims=True)
            W = np.where(nrm > 0, -dm.bound * Lph / np.where(nrm > 0, nrm, 1.0), 0.0)
        return np.einsum("niw,nw->ni", P, W)


@dataclass(frozen=True)
class SimConfig:
    x0: tuple[float, ...] = (1.0, 1.0)
    T: float = 20.0
    dt: float = 1e-3
    method: str = "rk4"
    disturbance: DisturbanceModel | None = None
    origin_radius: float | None = None  # stop once |x| <= origin_radius
    equilibrium_window: float = 1.0
    equilibrium_tol: float = 1e-6

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.T >= 0:
            raise ValueError("T must be non-negative")
        if self.method != "rk4":
            raise ValueError("only rk4 is supported")

    @property
    def steps(self) -> int:
        return int(math.floor(self.T / self.dt + 1e-9))


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    u_total: np.ndarray
    u_prime: np.ndarray
    delta: np.ndarray
    h: np.ndarray
    V: np.ndarray
    region: np.ndarray  # region codes, see cbf_qp.REGIONS
    error: str | None = None

    def __len__(self):
        return len(self.times)

    @property
    def region_names(self) -> list[str]:
        return [REGIONS[c].value if c >= 0 else "error" for c in self.region]

    def to_csv(self, path=None) -> str:
        n, m = self.states.shape[1], self.u_total.shape[1]
        cols = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)]
        cols += [f"uprime{j + 1}" for j in range(m)] + ["delta", "h", "V", "region"]
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        names = self.region_names
        for k in range(len(self.times)):
            nums = [self.times[k], *self.states[k], *self.u_total[k], *self.u_prime[k], self.delta[k], self.h[k], self.V[k]]
            buf.write(",".join(fmt(v) for v in nums) + "," + names[k] + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def fmt(v: float) -> str:
    """Fixed 17-significant-digit float formatting for reproducible files."""
    return format(float(v), ".17g")


def _rhs(model: SystemModel, X: np.ndarray, t: float, dist: _Disturbance | None):
    u, delta, code, d = solve_filter_batch(model, X)
    xdot = d["f_prime"] + np.einsum("nij,nj->ni", d["g"], u)
    if dist is not None:
        xdot = xdot + dist.term(t, X)
    return xdot, u, delta, code, d


def integrate_batch(model: SystemModel, X0: np.ndarray, cfg: SimConfig) -> list[Trajectory]:
    """Fixed-step RK4 for many initial states at once; rows never interact."""
    X = np.array(np.atleast_2d(X0), dtype=float)
    N, n = X.shape
    if n != model.n:
        raise ValueError(f"initial states need {model.n} components")
    m = model.m
    K = cfg.steps
    dt = cfg.dt
    dist = _Disturbance(cfg.disturbance, model) if cfg.disturbance is not None else None

    states = np.full((K + 1, N, n), np.nan)
    u_tot = np.full((K + 1, N, m), np.nan)
    u_pr = np.full((K + 1, N, m), np.nan)
    dl = np.full((K + 1, N), np.nan)
    hh = np.full((K + 1, N), np.nan)
    VV = np.full((K + 1, N), np.nan)
    reg = np.full((K + 1, N), -1, dtype=int)
    length = np.zeros(N, dtype=int)
    errors: list[str | None] = [None] * N
    active = np.ones(N, dtype=bool)

    def fail(rows, msg):
        for r in rows:
            if errors[r] is None:
                errors[r] = msg(r)
        active[rows] = False

    # diverging rows are caught by the finiteness check below
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(K + 1):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            t = k * dt
            Xa = X[idx]
            k1, u, delta, code, d = _rhs(model, Xa, t, dist)
            bad = code < 0
            if np.any(bad):
                rows = idx[bad]
                fail(rows, lambda r: f"filter failure at t={fmt(t)}: "
                     f"{'singular doubly-active system' if code[np.searchsorted(idx, r)] == -2 else 'no region applies'}")
            ok = ~bad
            idx, Xa, k1, u, delta, code = idx[ok], Xa[ok], k1[ok], u[ok], delta[ok], code[ok]
            states[k, idx] = Xa
            u_pr[k, idx] = u
            u_tot[k, idx] = d["u_nom"][ok] + u
            dl[k, idx] = delta
            hh[k, idx] = d["h"][ok]
            VV[k, idx] = d["V"][ok]
            reg[k, idx] = code
            length[idx] = k + 1
            if k == K or idx.size == 0:
                break
            if cfg.origin_radius is not None:
                near = np.linalg.norm(Xa, axis=1) <= cfg.origin_radius
                active[idx[near]] = False
                idx, Xa, k1 = idx[~near], Xa[~near], k1[~near]
                if idx.size == 0:
                    break
            k2, _, _, c2, _ = _rhs(model, Xa + 0.5 * dt * k1, t + 0.5 * dt, dist)
            k3, _, _, c3, _ = _rhs(model, Xa + 0.5 * dt * k2, t + 0.5 * dt, dist)
            k4, _, _, c4, _ = _rhs(model, Xa + dt * k3, t + dt, dist)
            stage_bad = (c2 < 0) | (c3 < 0) | (c4 < 0)
            Xn = Xa + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            nonfinite = ~np.all(np.isfinite(Xn), axis=1) & ~stage_bad
            if np.any(stage_bad):
                fail(idx[stage_bad], lambda r: f"filter failure inside step at t={fmt(t)}")
            if np.any(nonfinite):
                fail(idx[nonfinite], lambda r: f"non-finite state at t={fmt(t + dt)}")
            good = ~(stage_bad | nonfinite)
            X[idx[good]] = Xn[good]

    out = []
    for r in range(N):
        L = length[r]
        out.append(
            Trajectory(
                times=np.arange(L) * dt,
                states=states[:L, r].copy(),
                u_total=u_tot[:L, r].copy(),
                u_prime=u_pr[:L, r].copy(),
                delta=dl[:L, r].copy(),
                h=hh[:L, r].copy(),
                V=VV[:L, r].copy(),
                region=reg[:L, r].copy(),
                error=errors[r],
            )
        )
    return out


def integrate_closed_loop(model: SystemModel, cfg: SimConfig) -> Trajectory:
    return integrate_batch(model, np.asarray(cfg.x0, dtype=float)[None, :], cfg)[0]


@dataclass
class SimReport:
    min_h: float
    final_norm: float
    converged: bool
    safety_violated: bool
    first_violation_time: float | None
    equilibria: list[dict] = field(default_factory=list)
    occupancy: dict[str, int] = field(default_factory=dict)
    samples: int = 0
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "min_h": self.min_h,
            "final_norm": self.final_norm,
            "converged": self.converged,
            "safety_violated": self.safety_violated,
            "first_violation_time": self.first_violation_time,
            "equilibria": self.equilibria,
            "occupancy": self.occupancy,
            "samples": self.samples,
            "error": self.error,
        }

    def to_json(self) -> str:
        return jsonio.dumps(self.to_dict())


def analyze(
    trj: Trajectory,
    model: SystemModel | None = None,
    tol_h: float = 1e-6,
    converge_tol: float = 1e-3,
    window: float = 1.0,
    eq_tol: float = 1e-6,
    origin_tol: float = 1e-3,
) -> SimReport:
    """Monitors computed from the recorded samples only.

    ``model`` is accepted for symmetry with the other entry points; every
    quantity used here is already stored on the trajectory.
    """
    if len(trj) == 0:
        raise ValueError("empty trajectory")
    h = trj.h
    min_h = float(np.min(h))
    viol = (h[0] >= 0) & (h < -tol_h)
    first = float(trj.times[np.argmax(viol)]) if np.any(viol) else None
    final_norm = float(np.linalg.norm(trj.states[-1]))
    occupancy = {r.value: 0 for r in REGIONS}
    for name in trj.region_names:
        occupancy[name] = occupancy.get(name, 0) + 1

    equilibria = []
    if len(trj) >= 2:
        dt = float(trj.times[1] - trj.times[0])
        speed = np.linalg.norm(np.diff(trj.states, axis=0), axis=1) / dt
        w = max(1, int(round(window / dt)))
        slow = speed < eq_tol
        # run lengths of consecutive slow samples
        k = 0
        while k < len(slow):
            if not slow[k]:
                k += 1
                continue
            j = k
            while j < len(slow) and slow[j]:
                j += 1
            if j - k >= w:
                x = trj.states[k]
                equilibria.append(
                    {
                        "state": [float(v) for v in x],
                        "time": float(trj.times[k]),
                        "at_origin": bool(np.linalg.norm(x) <= origin_tol),
                    }
                )
            k = j
    elif np.linalg.norm(trj.states[0]) <= origin_tol:
        equilibria.append({"state": [float(v) for v in trj.states[0]], "time": 0.0, "at_origin": True})

    return SimReport(
        min_h=min_h,
        final_norm=final_norm,
        converged=final_norm <= converge_tol and trj.error is None,
        safety_violated=bool(np.any(viol)),
        first_violation_time=first,
        equilibria=equilibria,
        occupancy=occupancy,
        samples=len(trj),
        error=trj.error,
    )


@dataclass
class RoaCheck:
    fraction_converged: float
    counterexamples: list[dict]
    min_h: list[float]
    initial_states: np.ndarray

    def to_dict(self):
        return {
            "fraction_converged": self.fraction_converged,
            "counterexamples": self.counterexamples,
            "min_h": self.min_h,
            "initial_states": self.initial_states.tolist(),
        }


def _sublevel_box(V: Polynomial, eta: float, default: float) -> float:
    """Half-width of a box containing {V <= eta} for quadratic forms, else ``default``."""
    if V.degree == 2 and all(sum(mo) == 2 for mo in V.monomials()):
        n = V.nvars
        Q = np.zeros((n, n))
        for mo, c in V.items():
            idx = [i for i, e in enumerate(mo) for _ in range(e)]
            i, j = idx
            if i == j:
                Q[i, i] += c
            else:
                Q[i, j] += c / 2
                Q[j, i] += c / 2
        lmin = float(np.linalg.eigvalsh(Q).min())
        if lmin > 0:
            return math.sqrt(eta / lmin) * (1 + 1e-9)
    return default


def sample_sublevel(V: Polynomial, eta: float, N: int, seed: int = 0, box: float = 10.0, max_proposals: int = 1_000_000) -> np.ndarray:
    """Seeded rejection sampling of N points with 0 < V(x) <= eta."""
    if not eta > 0:
        raise SamplingError("eta must be positive to sample the sublevel set")
    rng = np.random.default_rng(seed)
    r = _sublevel_box(V, eta, box)
    ev = PolyEvaluator([V])
    pts = []
    proposals = 0
    while len(pts) < N and proposals < max_proposals:
        batch = min(10_000, max_proposals - proposals)
        X = rng.uniform(-r, r, size=(batch, V.nvars))
        proposals += batch
        v = ev(X)[:, 0]
        pts.extend(X[(v <= eta) & (v > 0)])
    if len(pts) < N:
        raise SamplingError(f"only {len(pts)} of {N} samples after {proposals} proposals")
    return np.array(pts[:N])


def roa_monte_carlo(
    model: SystemModel,
    eta: float,
    N: int = 100,
    cfg: SimConfig = SimConfig(T=50.0, dt=1e-2),
    seed: int = 0,
    converge_tol: float = 1e-3,
) -> RoaCheck:
    """Simulate N random starts from {V <= eta}; report who reached the origin."""
    if N < 1:
        raise ValueError("N must be at least 1")
    X0 = sample_sublevel(model.V, eta, N, seed)
    trajs = integrate_batch(model, X0, cfg)
    conv, bad, min_h = 0, [], []
    for x0, tr in zip(X0, trajs):
        rep = analyze(tr, model, converge_tol=converge_tol)
        min_h.append(rep.min_h)
        if rep.converged:
            conv += 1
        else:
            bad.append({"x0": [float(v) for v in x0], "final_norm": rep.final_norm, "error": rep.error})
    return RoaCheck(conv / N, bad, min_h, X0)


def start_grid(model: SystemModel, radius: float, per_axis: int = 5, require_safe: bool = True) -> np.ndarray:
    """per_axis**n grid on the cube inscribed in the ball of ``radius``, kept where h >= 0."""
    half = radius / math.sqrt(model.n)
    axes = [np.linspace(-half, half, per_axis)] * model.n
    G = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, model.n)
    if require_safe:
        hv = PolyEvaluator([model.h])(G)[:, 0]
        G = G[hv >= 0]
    return G


def grid_in_sublevel(V: Polynomial, eta: float, count: int = 100, exclude: float = 1e-3) -> np.ndarray:
    """Deterministic grid points with V <= eta, outside a small origin ball."""
    r = _sublevel_box(V, eta, 10.0)
    ev = PolyEvaluator([V])
    k = int(math.ceil(math.sqrt(count))) + 1
    while True:
        axes = [np.linspace(-r, r, k)] * V.nvars
        G = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, V.nvars)
        keep = (ev(G)[:, 0] <= eta) & (np.linalg.norm(G, axis=1) > exclude)
        if keep.sum() >= count:
            return G[keep]
        k += 1
