import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cbfsos.models import barrier_h, plant
from cbfsos.poly import (
    DimensionError,
    PolyEvaluator,
    PolyMatrix,
    Polynomial,
    binomial,
    grlex_key,
    lie_derivative,
    monomial_basis,
    partial_derivative,
    truncate,
    variables,
)

NVARS = 2


def polys(nvars=NVARS, max_deg=3, max_terms=6):
    mono = st.tuples(*[st.integers(0, max_deg)] * nvars).filter(lambda m: sum(m) <= max_deg)
    coeff = st.floats(-10, 10, allow_nan=False).filter(lambda c: c == 0 or abs(c) > 1e-3)
    return st.dictionaries(mono, coeff, max_size=max_terms).map(lambda t: Polynomial(nvars, t))


points = st.lists(st.floats(-3, 3, allow_nan=False), min_size=NVARS, max_size=NVARS)


def close(a: Polynomial, b: Polynomial, rel=1e-12) -> bool:
    scale = max(1.0, a.max_abs_coeff(), b.max_abs_coeff())
    return (a - b).max_abs_coeff() <= rel * scale * 10


# examples


def test_additive_inverse_is_empty():
    x1, _ = variables(2)
    z = x1 + (-x1)
    assert z.is_zero() and len(z.terms) == 0


def test_difference_of_squares():
    x1, x2 = variables(2)
    assert (x1 + x2) * (x1 - x2) == x1**2 - x2**2


def test_scaled_barrier_at_origin():
    assert barrier_h().scale(2)([0, 0]) == pytest.approx(9.8)


def test_barrier_values():
    h = barrier_h()
    assert h([0, 0]) == pytest.approx(4.9)
    assert h([1, 1]) == pytest.approx(4.55)
    assert Polynomial.constant(1.0, 2)([3.7, -2.0]) == 1.0


def test_partials():
    x1, x2 = variables(2)
    assert partial_derivative(x1**2 * x2, 0) == 2 * x1 * x2
    assert close(barrier_h().partial(1), -0.15 * x1 - 0.2 * x2)
    assert Polynomial.constant(3.0, 2).partial(1).is_zero()
    with pytest.raises(IndexError):
        x1.partial(2)


def test_lie_derivatives_of_barrier():
    x1, x2 = variables(2)
    f, g = plant()
    assert close(lie_derivative(f, barrier_h()), 0.15 * x1**2 + 0.4 * x1 * x2 + 0.15 * x2**2)
    assert close(lie_derivative(g.col(0), barrier_h()), -0.15 * x1 - 0.2 * x2)
    assert lie_derivative(f, Polynomial.constant(2.0, 2)).is_zero()


def test_monomial_basis_examples():
    assert monomial_basis(2, 2) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    assert monomial_basis(2, 1) == [(0, 0), (1, 0), (0, 1)]
    assert monomial_basis(3, 0) == [(0, 0, 0)]
    assert (0, 0) not in monomial_basis(2, 2, include_constant=False)


@pytest.mark.parametrize("n,d", [(1, 4), (2, 3), (3, 2), (4, 2)])
def test_monomial_basis_size(n, d):
    assert len(monomial_basis(n, d)) == binomial(n + d, d) == math.comb(n + d, d)


def test_dimension_errors():
    a = Polynomial.variable(0, 2)
    b = Polynomial.variable(0, 3)
    with pytest.raises(DimensionError):
        a + b
    with pytest.raises(DimensionError):
        a([1.0, 2.0, 3.0])
    with pytest.raises(DimensionError):
        lie_derivative([a], a)
    with pytest.raises(DimensionError):
        Polynomial(2, {(1,): 1.0})


def test_truncate_is_explicit():
    x1, x2 = variables(2)
    p = x1 + 1e-14 * x2
    assert len(p) == 2
    assert truncate(p, 1e-12) == x1


def test_record_round_trip_is_bit_exact():
    h = barrier_h() * 0.1 + Polynomial.constant(1 / 3, 2)
    text = json.dumps(h.to_records())
    assert Polynomial.from_records(2, json.loads(text)) == h


def test_poly_matrix_shape_checks():
    x1, x2 = variables(2)
    M = PolyMatrix([[x1, x2], [x2, x1]])
    assert M.shape == (2, 2)
    assert np.allclose(M.evaluate([1.0, 2.0]), [[1, 2], [2, 1]])
    with pytest.raises((ValueError, DimensionError)):
        PolyMatrix([[x1], [x1, x2]])


def test_evaluator_matches_scalar_evaluation():
    h = barrier_h()
    X = np.random.default_rng(0).uniform(-5, 5, size=(50, 2))
    vals = PolyEvaluator([h])(X)[:, 0]
    assert np.allclose(vals, [h(x) for x in X], rtol=1e-13, atol=1e-13)


# properties


@given(polys(), polys(), polys())
def test_ring_associativity(a, b, c):
    assert close((a + b) + c, a + (b + c))
    assert close((a * b) * c, a * (b * c), rel=1e-11)


@given(polys(), polys())
def test_ring_commutativity(a, b):
    assert close(a + b, b + a)
    assert close(a * b, b * a)


@given(polys(), polys(), polys())
def test_distributivity(a, b, c):
    assert close(a * (b + c), a * b + a * c, rel=1e-11)


@given(polys(), polys(), points)
def test_evaluation_is_a_homomorphism(a, b, x):
    lhs = (a * b)(x)
    rhs = a(x) * b(x)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-9 * (1 + abs(a(x)) + abs(b(x))) ** 2)


@given(polys(), polys(), st.integers(0, NVARS - 1))
def test_leibniz_rule(a, b, i):
    assert close((a * b).partial(i), a * b.partial(i) + b * a.partial(i))


@given(polys(), polys(), polys(), polys(), polys(), polys(), st.floats(-3, 3, allow_nan=False))
def test_lie_derivative_is_linear(f1, f2, g1, g2, p, q, s):
    field_a = [f1, f2]
    field_b = [g1, g2]
    summed = [fa + s * fb for fa, fb in zip(field_a, field_b)]
    assert close(lie_derivative(summed, p), lie_derivative(field_a, p) + s * lie_derivative(field_b, p), rel=1e-11)
    assert close(lie_derivative(field_a, p + s * q), lie_derivative(field_a, p) + s * lie_derivative(field_a, q), rel=1e-11)


@given(st.integers(1, 4), st.integers(0, 4))
def test_basis_is_strictly_increasing_in_grlex(n, d):
    basis = monomial_basis(n, d)
    keys = [grlex_key(m) for m in basis]
    assert all(k1 < k2 for k1, k2 in zip(keys, keys[1:]))
    assert basis == monomial_basis(n, d)


@given(polys())
def test_no_stored_zero_coefficients(p):
    assert all(c != 0.0 for _, c in p.items())
    assert [grlex_key(m) for m in p.monomials()] == sorted(grlex_key(m) for m in p.monomials())


@given(polys(), st.floats(0.1, 5))
def test_rescaled_evaluates_at_scaled_point(p, s):
    x = np.array([0.3, -0.7])
    assert p.rescaled(s)(x) == pytest.approx(p(s * x), rel=1e-10, abs=1e-10)
