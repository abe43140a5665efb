"""Small dense SDP solver for standard primal form.

    minimize (or maximize)  sum_k <C_k, X_k>
    subject to              sum_k <A_jk, X_k> = b_j,   X_k in K_k

Each cone K_k is either the PSD cone of order s (``size = s > 0``) or the
non-negative orthant of dimension s (``size = -s``, SDPA's diagonal-block
convention).  The solver is an alternating-direction augmented Lagrangian
method applied to the dual: an affine step in y through a cached Cholesky
factor of A A^T, a cone projection, and a multiplier update in X.  Iterates X
are cone members by construction, so only the equality residual and the dual
residual have to be driven to zero.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

logger = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max_iter"


class NotSymmetricError(ValueError):
    pass


def project_psd(M: np.ndarray, sym_tol: float = 1e-12) -> np.ndarray:
    """Nearest PSD matrix in Frobenius norm (negative eigenvalues clipped)."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NotSymmetricError(f"expected a square matrix, got shape {M.shape}")
    if M.size and np.max(np.abs(M - M.T)) > sym_tol * max(1.0, np.max(np.abs(M))):
        raise NotSymmetricError("matrix is not symmetric")
    M = 0.5 * (M + M.T)
    w, U = np.linalg.eigh(M)
    return (U * np.maximum(w, 0.0)) @ U.T


@dataclass
class SdpInstance:
    """Standard-form SDP with sparse symmetric data.

    ``C`` holds objective entries and ``A`` constraint entries as tuples
    ``(block, i, j, value)`` and ``(row, block, i, j, value)`` with ``i <= j``;
    the matrices are symmetric so each off-diagonal entry stands for both
    (i, j) and (j, i).  Diagonal blocks only accept ``i == j``.  Diagonal
    blocks listed in ``free_blocks`` are unconstrained instead of nonnegative.
    """

    block_sizes: list[int]
    b: np.ndarray
    A: list[tuple[int, int, int, int, float]]
    C: list[tuple[int, int, int, float]] = field(default_factory=list)
    sense: str = "min"
    free_blocks: tuple[int, ...] = ()

    def __post_init__(self):
        self.block_sizes = [int(s) for s in self.block_sizes]
        self.free_blocks = tuple(sorted(int(k) for k in self.free_blocks))
        for k in self.free_blocks:
            if not 0 <= k < len(self.block_sizes) or self.block_sizes[k] > 0:
                raise ValueError(f"free block {k} must be a diagonal block")
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be 'min' or 'max', got {self.sense!r}")
        for entry in self.A:
            r, k, i, j, _ = entry
            self._check_entry(k, i, j)
            if not 0 <= r < len(self.b):
                raise ValueError(f"constraint row {r} out of range")
        for k, i, j, _ in self.C:
            self._check_entry(k, i, j)

    def _check_entry(self, k, i, j):
        if not 0 <= k < len(self.block_sizes):
            raise ValueError(f"block {k} out of range")
        s = self.block_sizes[k]
        if not (0 <= i <= j < abs(s)):
            raise ValueError(f"entry ({i},{j}) invalid for block of size {s}")
        if s < 0 and i != j:
            raise ValueError("diagonal blocks only take diagonal entries")

    @property
    def num_rows(self) -> int:
        return len(self.b)

    def layout(self) -> "_Layout":
        return _Layout(self.block_sizes, self.free_blocks)

    def dense_data(self):
        """(A, b, c) in svec coordinates; A has shape (rows, nvec)."""
        lay = self.layout()
        A = np.zeros((self.num_rows, lay.nvec))
        for r, k, i, j, v in self.A:
            A[r, lay.pos(k, i, j)] += v if i == j else SQRT2 * v
        c = np.zeros(lay.nvec)
        for k, i, j, v in self.C:
            c[lay.pos(k, i, j)] += v if i == j else SQRT2 * v
        return A, self.b.copy(), c

    def cost_matrices(self) -> list[np.ndarray]:
        mats = [np.zeros((abs(s), abs(s))) for s in self.block_sizes]
        for k, i, j, v in self.C:
            mats[k][i, j] += v
            if i != j:
                mats[k][j, i] += v
        return mats

    def to_json(self) -> str:
        return json.dumps(
            {
                "block_sizes": self.block_sizes,
                "sense": self.sense,
                "free_blocks": list(self.free_blocks),
                "b": [float(v) for v in self.b],
                "C": [[int(k), int(i), int(j), float(v)] for k, i, j, v in self.C],
                "A": [[int(r), int(k), int(i), int(j), float(v)] for r, k, i, j, v in self.A],
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "SdpInstance":
        d = json.loads(text)
        return cls(
            block_sizes=d["block_sizes"],
            b=np.array(d["b"], dtype=float),
            A=[(int(r), int(k), int(i), int(j), float(v)) for r, k, i, j, v in d["A"]],
            C=[(int(k), int(i), int(j), float(v)) for k, i, j, v in d["C"]],
            sense=d.get("sense", "min"),
            free_blocks=tuple(d.get("free_blocks", ())),
        )

    def __eq__(self, other):
        return (
            isinstance(other, SdpInstance)
            and self.block_sizes == other.block_sizes
            and self.sense == other.sense
            and self.free_blocks == other.free_blocks
            and np.array_equal(self.b, other.b)
            and self.A == other.A
            and self.C == other.C
        )


class _Layout:
    """Maps blocks to slices of the stacked svec vector."""

    def __init__(self, sizes: Sequence[int], free: Sequence[int] = ()):
        self.sizes = list(sizes)
        self.free = set(free)
        self.offsets = []
        off = 0
        for s in self.sizes:
            self.offsets.append(off)
            off += s * (s + 1) // 2 if s > 0 else -s
        self.nvec = off
        self._tri = {}
        self.diag_idx = np.array(
            [self.offsets[k] + i for k, s in enumerate(self.sizes) if s < 0 and k not in self.free for i in range(-s)], dtype=int
        )
        # group PSD blocks by order for batched eigendecompositions
        groups: dict[int, list[int]] = {}
        for k, s in enumerate(self.sizes):
            if s > 0:
                groups.setdefault(s, []).append(k)
        self.groups = []
        for s, ks in sorted(groups.items()):
            iu, ju = np.triu_indices(s)
            local = self._local_index(s)
            full = np.array([self.offsets[k] + local for k in ks])  # (nb, s, s)
            tri = np.array([self.offsets[k] + np.arange(s * (s + 1) // 2) for k in ks])
            offdiag = (iu != ju)
            self.groups.append((s, ks, full, tri, iu, ju, offdiag))

    def _local_index(self, s: int) -> np.ndarray:
        if s not in self._tri:
            idx = np.zeros((s, s), dtype=int)
            n = 0
            for i in range(s):
                for j in range(i, s):
                    idx[i, j] = idx[j, i] = n
                    n += 1
            self._tri[s] = idx
        return self._tri[s]

    def pos(self, k: int, i: int, j: int) -> int:
        s = self.sizes[k]
        if s < 0:
            return self.offsets[k] + i
        return self.offsets[k] + int(self._local_index(s)[i, j])

    def to_mats(self, v: np.ndarray, s: int, full: np.ndarray) -> np.ndarray:
        scale = np.where(np.eye(s, dtype=bool), 1.0, 1.0 / SQRT2)
        return v[full] * scale

    def project(self, v: np.ndarray, return_min_eig: bool = False):
        # projection onto the dual cone: zero on free blocks, self-dual elsewhere
        out = np.zeros_like(v)
        if self.diag_idx.size:
            out[self.diag_idx] = np.maximum(v[self.diag_idx], 0.0)
        for s, ks, full, tri, iu, ju, offdiag in self.groups:
            M = self.to_mats(v, s, full)
            w, U = np.linalg.eigh(M)
            P = (U * np.maximum(w, 0.0)[:, None, :]) @ np.swapaxes(U, 1, 2)
            vals = P[:, iu, ju]
            vals[:, offdiag] *= SQRT2
            out[tri] = vals
        return out

    def unpack(self, v: np.ndarray) -> list[np.ndarray]:
        mats = []
        for k, s in enumerate(self.sizes):
            off = self.offsets[k]
            if s < 0:
                mats.append(np.diag(v[off : off - s].copy()))
            else:
                M = v[off + self._local_index(s)].copy()
                M[~np.eye(s, dtype=bool)] /= SQRT2
                mats.append(M)
        return mats

    def min_eigs(self, v: np.ndarray) -> list[float]:
        out = []
        for k, M in enumerate(self.unpack(v)):
            if k in self.free:
                out.append(0.0)
            else:
                out.append(float(np.linalg.eigvalsh(M).min()) if M.size else 0.0)
        return out


@dataclass
class SdpSolution:
    status: str
    X: list[np.ndarray]
    y: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    min_eigs: list[float] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def residuals(inst: SdpInstance, X: Sequence[np.ndarray], y: np.ndarray):
    """Post-hoc residuals computed from returned data only.

    Returns (max |A(X) - b|, dual cone violation, |primal obj - dual obj|).
    """
    lay = inst.layout()
    A, b, c = inst.dense_data()
    x = np.zeros(lay.nvec)
    for k, (s, M) in enumerate(zip(lay.sizes, X)):
        off = lay.offsets[k]
        if s < 0:
            x[off : off - s] = np.diag(M)
        else:
            iu, ju = np.triu_indices(s)
            vals = M[iu, ju].copy()
            vals[iu != ju] *= SQRT2
            x[off + lay._local_index(s)[iu, ju]] = vals
    sign = 1.0 if inst.sense == "min" else -1.0
    pres = float(np.max(np.abs(A @ x - b))) if len(b) else 0.0
    slack = sign * c - A.T @ (sign * y)
    # dual feasibility means slack is in the (self-dual) cone
    dres = float(np.linalg.norm(slack - lay.project(slack)))
    gap = float(abs(c @ x - b @ y))
    return pres, dres, gap


def solve(
    inst: SdpInstance,
    tol: float = 1e-8,
    max_iter: int = 200_000,
    mu: float = 1.0,
    check_every: int = 20,
    infeas_tol: float | None = None,
    relax: float = 1.6,
    adaptive_mu: bool = True,
) -> SdpSolution:
    """Solve ``inst``; deterministic for fixed inputs."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0 < relax < 1.618:
        raise ValueError("relax must lie in (0, 1.618)")
    lay = inst.layout()
    A, b, c = inst.dense_data()
    sign = 1.0 if inst.sense == "min" else -1.0
    c = sign * c
    m, nvec = A.shape
    infeas_tol = infeas_tol if infeas_tol is not None else max(10 * tol, 1e-7)

    # row equilibration and data scaling
    rn = np.linalg.norm(A, axis=1)
    empty = rn == 0
    if np.any(empty & (np.abs(b) > 0)):
        return _trivially_infeasible(inst, lay)
    rn[empty] = 1.0
    D = 1.0 / rn
    As = A * D[:, None]
    bs = b * D
    sb = max(1.0, float(np.linalg.norm(bs)))
    sc = max(1.0, float(np.linalg.norm(c)))
    bh = bs / sb
    ch = c / sc

    if m:
        G = As @ As.T
        G[np.diag_indices(m)] += 1e-13 * (1.0 + np.max(np.diag(G)))
        G[empty, empty] = 1.0
        fac = sla.cho_factor(G)
    x = np.zeros(nvec)
    s = np.zeros(nvec)
    y = np.zeros(m)
    y_prev = y.copy()
    x_prev = x.copy()
    nb, nc = 1.0 + np.linalg.norm(bh), 1.0 + np.linalg.norm(ch)
    best = None
    status = MAX_ITER
    it = 0
    ratio_hist = 0
    infeas_hits = 0
    unb_hits = 0
    for it in range(1, max_iter + 1):
        if m:
            rhs = mu * (bh - As @ x) + As @ (ch - s)
            y = sla.cho_solve(fac, rhs)
            Aty = As.T @ y
        else:
            Aty = np.zeros(nvec)
        v = ch - Aty - mu * x
        s = lay.project(v)
        x = x + relax * (s - v - mu * x) / mu

        if it % check_every and it != max_iter:
            continue
        rp = np.linalg.norm(As @ x - bh) / nb
        rd = np.linalg.norm(Aty + s - ch) / nc
        pobj, dobj = ch @ x, bh @ y
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        score = max(rp, rd, gap)
        if best is None or score <= best[0]:
            best = (score, x.copy(), y.copy())
        # the absolute row residual in original units is also part of the contract
        if rp <= tol and rd <= tol and gap <= tol and np.max(np.abs(As @ x - bh) * (sb * rn), initial=0.0) <= 10 * tol:
            status = OPTIMAL
            best = (score, x.copy(), y.copy())
            break

        # improving rays from successive differences
        dy = y - y_prev
        ndy = np.linalg.norm(dy)
        if ndy > 0 and np.linalg.norm(y) > 1e3:
            d = dy / ndy
            bd = bh @ d
            z = As.T @ d
            viol = np.linalg.norm(z + lay.project(-z))  # distance of z to the negated dual cone
            infeas_hits = infeas_hits + 1 if bd > 0 and viol <= infeas_tol * bd else 0
        else:
            infeas_hits = 0
        dx = x - x_prev
        ndx = np.linalg.norm(dx)
        if ndx > 0 and np.linalg.norm(x) > 1e3:
            d = dx / ndx
            cd = ch @ d
            unb_hits = unb_hits + 1 if cd < 0 and np.linalg.norm(As @ d) <= infeas_tol * -cd else 0
        else:
            unb_hits = 0
        if infeas_hits >= 5:
            status = INFEASIBLE
            break
        if unb_hits >= 5:
            status = UNBOUNDED
            break
        y_prev = y.copy()
        x_prev = x.copy()

        # keep primal and dual residuals balanced
        if rp > 10 * rd:
            ratio_hist += 1
        elif rd > 10 * rp:
            ratio_hist -= 1
        else:
            ratio_hist = 0
        if not adaptive_mu:
            ratio_hist = 0
        if ratio_hist >= 5:
            mu = min(mu * 1.6, 1e6)
            ratio_hist = 0
        elif ratio_hist <= -5:
            mu = max(mu / 1.6, 1e-6)
            ratio_hist = 0

    _, xb, yb = best if best is not None else (None, x, y)
    if status in (INFEASIBLE, UNBOUNDED):
        xb, yb = x, y
    x_orig = xb * sb
    y_orig = sign * (yb * sc) * D
    X = lay.unpack(x_orig)
    pres, dres, gap = residuals(inst, X, y_orig)
    obj = float(sum_obj(inst, X))
    logger.debug("sdp %s after %d iterations: pres=%.2e dres=%.2e gap=%.2e", status, it, pres, dres, gap)
    return SdpSolution(
        status=status,
        X=X,
        y=y_orig,
        objective=obj,
        primal_residual=pres,
        dual_residual=dres,
        gap=gap,
        iterations=it,
        min_eigs=lay.min_eigs(x_orig),
    )


def sum_obj(inst: SdpInstance, X: Sequence[np.ndarray]) -> float:
    total = 0.0
    for k, i, j, v in inst.C:
        total += v * X[k][i, j] * (1 if i == j else 2)
    return total


def _trivially_infeasible(inst, lay):
    X = lay.unpack(np.zeros(lay.nvec))
    return SdpSolution(INFEASIBLE, X, np.zeros(inst.num_rows), 0.0, float("inf"), 0.0, 0.0, 0, lay.min_eigs(np.zeros(lay.nvec)))
