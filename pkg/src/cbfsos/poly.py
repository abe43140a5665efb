"""Sparse real multivariate polynomials.

Polynomials are immutable maps from exponent tuples to float coefficients.
Exact zeros are pruned on construction; anything else is kept (use
:func:`truncate` for explicit near-zero cleanup).  Iteration is always in
graded-lexicographic order so compiled programs and golden files are
deterministic.
"""

from __future__ import annotations

import math
from itertools import combinations_with_replacement
from numbers import Real
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

Monomial = tuple[int, ...]


class DimensionError(ValueError):
    """Operands live in polynomial rings with different numbers of variables."""


def grlex_key(mono: Monomial) -> tuple:
    """Sort key for graded-lex order: total degree, then x1 > x2 > ... ."""
    return (sum(mono), tuple(-e for e in mono))


def monomial_basis(nvars: int, degree: int, include_constant: bool = True) -> list[Monomial]:
    """All monomials in ``nvars`` variables of total degree <= ``degree``.

    >>> monomial_basis(2, 2)
    [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    """
    if degree < 0:
        raise ValueError("degree must be non-negative")
    out: list[Monomial] = []
    start = 0 if include_constant else 1
    for d in range(start, degree + 1):
        level = []
        for combo in combinations_with_replacement(range(nvars), d):
            e = [0] * nvars
            for i in combo:
                e[i] += 1
            level.append(tuple(e))
        level.sort(key=grlex_key)
        out.extend(level)
    return out


def mono_mul(a: Monomial, b: Monomial) -> Monomial:
    return tuple(i + j for i, j in zip(a, b))


class Polynomial:
    __slots__ = ("nvars", "_terms", "_hash")

    def __init__(self, nvars: int, terms: Mapping[Monomial, float] | None = None):
        self.nvars = int(nvars)
        clean: dict[Monomial, float] = {}
        if terms:
            for mono, c in terms.items():
                mono = tuple(int(e) for e in mono)
                if len(mono) != self.nvars:
                    raise DimensionError(f"monomial {mono} does not have {self.nvars} exponents")
                if any(e < 0 for e in mono):
                    raise ValueError(f"negative exponent in {mono}")
                c = float(c)
                if c != 0.0:
                    clean[mono] = clean.get(mono, 0.0) + c
        self._terms = {m: clean[m] for m in sorted(clean, key=grlex_key) if clean[m] != 0.0}
        self._hash = None

    # constructors

    @classmethod
    def constant(cls, value: float, nvars: int) -> "Polynomial":
        return cls(nvars, {(0,) * nvars: value})

    @classmethod
    def variable(cls, index: int, nvars: int) -> "Polynomial":
        if not 0 <= index < nvars:
            raise IndexError(f"variable index {index} out of range for {nvars} variables")
        e = [0] * nvars
        e[index] = 1
        return cls(nvars, {tuple(e): 1.0})

    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls(nvars)

    # inspection

    @property
    def terms(self) -> dict[Monomial, float]:
        return dict(self._terms)

    def items(self) -> Iterator[tuple[Monomial, float]]:
        return iter(self._terms.items())

    def monomials(self) -> list[Monomial]:
        return list(self._terms)

    def coefficient(self, mono: Monomial) -> float:
        return self._terms.get(tuple(mono), 0.0)

    def __len__(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    @property
    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((sum(m) for m in self._terms), default=-1)

    def is_constant(self) -> bool:
        return self.degree <= 0

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    # arithmetic

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.nvars != self.nvars:
                raise DimensionError(f"nvars mismatch: {self.nvars} vs {other.nvars}")
            return other
        if isinstance(other, (Real, np.floating, np.integer)):
            return Polynomial.constant(float(other), self.nvars)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        t = dict(self._terms)
        for m, c in other._terms.items():
            t[m] = t.get(m, 0.0) + c
        return Polynomial(self.nvars, t)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.nvars, {m: -c for m, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return other - self

    def __mul__(self, other):
        if isinstance(other, (Real, np.floating, np.integer)):
            return self.scale(float(other))
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        t: dict[Monomial, float] = {}
        for ma, ca in self._terms.items():
            for mb, cb in other._terms.items():
                m = mono_mul(ma, mb)
                t[m] = t.get(m, 0.0) + ca * cb
        return Polynomial(self.nvars, t)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (Real, np.floating, np.integer)):
            return self.scale(1.0 / float(other))
        return NotImplemented

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise ValueError("only non-negative integer powers are supported")
        out = Polynomial.constant(1.0, self.nvars)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def scale(self, s: float) -> "Polynomial":
        return Polynomial(self.nvars, {m: c * s for m, c in self._terms.items()})

    def rescaled(self, s: float) -> "Polynomial":
        """The polynomial z -> p(s * z)."""
        return Polynomial(self.nvars, {m: c * s ** sum(m) for m, c in self._terms.items()})

    def __eq__(self, other):
        if isinstance(other, (Real, np.floating, np.integer)):
            other = Polynomial.constant(float(other), self.nvars)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.nvars, tuple(self._terms.items())))
        return self._hash

    # calculus / evaluation

    def evaluate(self, x: Sequence[float]) -> float:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.nvars:
            raise DimensionError(f"expected a point with {self.nvars} coordinates, got {x.shape[0]}")
        total = 0.0
        for mono, c in self._terms.items():
            v = c
            for xi, e in zip(x, mono):
                if e:
                    v *= xi**e
            total += v
        return float(total)

    __call__ = evaluate

    def partial(self, i: int) -> "Polynomial":
        if not 0 <= i < self.nvars:
            raise IndexError(f"variable index {i} out of range for {self.nvars} variables")
        t = {}
        for mono, c in self._terms.items():
            e = mono[i]
            if e:
                m = list(mono)
                m[i] -= 1
                t[tuple(m)] = c * e
        return Polynomial(self.nvars, t)

    def gradient(self) -> list["Polynomial"]:
        return [self.partial(i) for i in range(self.nvars)]

    # display / io

    def __repr__(self):
        if not self._terms:
            return f"Polynomial({self.nvars}, 0)"
        return f"Polynomial({self.nvars}, {self.to_string()})"

    def to_string(self, names: Sequence[str] | None = None, digits: int = 6) -> str:
        names = names or [f"x{i + 1}" for i in range(self.nvars)]
        parts = []
        for mono, c in self._terms.items():
            facs = [n if e == 1 else f"{n}^{e}" for n, e in zip(names, mono) if e]
            coef = f"{c:.{digits}g}"
            parts.append("*".join([coef] + facs) if facs else coef)
        return " + ".join(parts).replace("+ -", "- ") if parts else "0"

    def to_records(self) -> list[dict]:
        return [{"exponents": list(m), "coeff": c} for m, c in self._terms.items()]

    @classmethod
    def from_records(cls, nvars: int, records: Iterable[Mapping]) -> "Polynomial":
        t: dict[Monomial, float] = {}
        for r in records:
            m = tuple(int(e) for e in r["exponents"])
            t[m] = t.get(m, 0.0) + float(r["coeff"])
        return cls(nvars, t)


def variables(nvars: int) -> tuple[Polynomial, ...]:
    return tuple(Polynomial.variable(i, nvars) for i in range(nvars))


def partial_derivative(p: Polynomial, i: int) -> Polynomial:
    return p.partial(i)


def evaluate(p: Polynomial, x: Sequence[float]) -> float:
    return p.evaluate(x)


def truncate(p: Polynomial, tol: float) -> Polynomial:
    """Drop coefficients with magnitude <= tol."""
    return Polynomial(p.nvars, {m: c for m, c in p.items() if abs(c) > tol})


def lie_derivative(field: Sequence[Polynomial], p: Polynomial) -> Polynomial:
    """Directional derivative of ``p`` along the vector field ``field``."""
    field = list(field)
    if len(field) != p.nvars:
        raise DimensionError(f"field has {len(field)} components, polynomial has {p.nvars} variables")
    out = Polynomial.zero(p.nvars)
    for i, fi in enumerate(field):
        if fi.nvars != p.nvars:
            raise DimensionError("field component nvars mismatch")
        out = out + p.partial(i) * fi
    return out


def dot(a: Sequence[Polynomial], b: Sequence[Polynomial]) -> Polynomial:
    a, b = list(a), list(b)
    if len(a) != len(b):
        raise DimensionError(f"length mismatch {len(a)} vs {len(b)}")
    if not a:
        raise ValueError("empty vectors")
    out = Polynomial.zero(a[0].nvars)
    for ai, bi in zip(a, b):
        out = out + ai * bi
    return out


class PolyMatrix:
    """Rectangular array of polynomials sharing one ring."""

    __slots__ = ("rows", "cols", "nvars", "_entries")

    def __init__(self, entries: Sequence[Sequence[Polynomial]]):
        rows = [list(r) for r in entries]
        if not rows or not rows[0]:
            raise ValueError("PolyMatrix needs at least one entry")
        cols = len(rows[0])
        if any(len(r) != cols for r in rows):
            raise DimensionError("ragged PolyMatrix")
        nv = rows[0][0].nvars
        if any(p.nvars != nv for r in rows for p in r):
            raise DimensionError("PolyMatrix entries disagree on nvars")
        self.rows, self.cols, self.nvars = len(rows), cols, nv
        self._entries = tuple(tuple(r) for r in rows)

    @classmethod
    def column(cls, polys: Sequence[Polynomial]) -> "PolyMatrix":
        return cls([[p] for p in polys])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def __getitem__(self, ij):
        i, j = ij
        return self._entries[i][j]

    def col(self, j: int) -> list[Polynomial]:
        return [r[j] for r in self._entries]

    def row(self, i: int) -> list[Polynomial]:
        return list(self._entries[i])

    def entries(self) -> tuple[tuple[Polynomial, ...], ...]:
        return self._entries

    def flat(self) -> list[Polynomial]:
        return [p for r in self._entries for p in r]

    def evaluate(self, x) -> np.ndarray:
        return np.array([[p.evaluate(x) for p in r] for r in self._entries])

    def __matmul__(self, other: "PolyMatrix") -> "PolyMatrix":
        if self.cols != other.rows:
            raise DimensionError(f"cannot multiply {self.shape} by {other.shape}")
        return PolyMatrix(
            [[dot(self.row(i), other.col(j)) for j in range(other.cols)] for i in range(self.rows)]
        )

    def __eq__(self, other):
        return isinstance(other, PolyMatrix) and self._entries == other._entries

    def __repr__(self):
        return f"PolyMatrix{self.shape}"

    def to_records(self) -> list[list[list[dict]]]:
        return [[p.to_records() for p in r] for r in self._entries]

    @classmethod
    def from_records(cls, nvars: int, records) -> "PolyMatrix":
        return cls([[Polynomial.from_records(nvars, e) for e in r] for r in records])


class PolyEvaluator:
    """Batch evaluation of a fixed list of polynomials.

    Compiles the union of monomials into an exponent table so that evaluating
    K polynomials at N points is a couple of numpy operations.
    """

    def __init__(self, polys: Sequence[Polynomial]):
        polys = list(polys)
        if not polys:
            raise ValueError("nothing to evaluate")
        self.nvars = polys[0].nvars
        monos = sorted({m for p in polys for m in p.monomials()}, key=grlex_key)
        if not monos:
            monos = [(0,) * self.nvars]
        index = {m: k for k, m in enumerate(monos)}
        self._exp = np.array(monos, dtype=int).reshape(len(monos), self.nvars)
        self._coef = np.zeros((len(monos), len(polys)))
        for j, p in enumerate(polys):
            for m, c in p.items():
                self._coef[index[m], j] = c
        self._maxdeg = int(self._exp.max()) if self._exp.size else 0

    def __call__(self, X: np.ndarray) -> np.ndarray:
        """X: (N, n) or (n,) -> (N, K) or (K,)."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = X.reshape(-1, self.nvars)
        N = X2.shape[0]
        # pw[k, :, i] = x_i ** k
        pw = np.ones((self._maxdeg + 1, N, self.nvars))
        for k in range(1, self._maxdeg + 1):
            pw[k] = pw[k - 1] * X2
        mon = np.ones((N, self._exp.shape[0]))
        for i in range(self.nvars):
            mon *= pw[self._exp[:, i], :, i].T
        out = mon @ self._coef
        return out[0] if single else out


def binomial(n: int, k: int) -> int:
    return math.comb(n, k)
