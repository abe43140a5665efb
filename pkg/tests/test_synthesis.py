import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbfsos import sos
from cbfsos.cbf_qp import SystemModel
from cbfsos.models import barrier_h, linear2d, linear2d_stabilized
from cbfsos.poly import PolyEvaluator, PolyMatrix, Polynomial, variables
from cbfsos.sim import SimConfig, analyze, grid_in_sublevel, integrate_batch
from cbfsos.synthesis import (
    GLOBAL,
    DegreeBudget,
    DomainBall,
    cbc_check,
    check_clf_condition,
    estimate_roa,
    margin_fixed_h,
    scaled_model,
    search_robust_cbf,
    verify_cbf,
)


def scalar_model() -> SystemModel:
    """x' = -x + u with h = 1 - x^2 and V = x^2."""
    (x,) = variables(1)
    one = Polynomial.constant(1.0, 1)
    return SystemModel(
        f=(-x,), g=PolyMatrix([[one]]), u_nom=(Polynomial.zero(1),), V=x * x, h=1 - x * x, lam=one, variant="tan"
    )


def disc_model() -> SystemModel:
    """x' = -x + (0, 1) u with h = 1 - |x|^2."""
    x1, x2 = variables(2)
    zero, one = Polynomial.zero(2), Polynomial.constant(1.0, 2)
    return SystemModel(
        f=(-x1, -x2), g=PolyMatrix([[zero], [one]]), u_nom=(zero,), V=x1**2 + x2**2,
        h=1 - x1**2 - x2**2, lam=one, variant="tan",
    )


def verified(cert) -> bool:
    return cert is not None and sos.verify_certificate(cert).passed


# margin with h fixed


def test_scalar_margin_is_two():
    res = margin_fixed_h(scalar_model(), budget=DegreeBudget(deg_lambda=0, deg_lambda1=0), lambda_origin=None)
    assert res.ok and verified(res.certificate)
    assert res.eta == pytest.approx(2.0, abs=1e-5)
    assert res.lam([0.0]) == pytest.approx(2.0, abs=1e-4)


def test_margin_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        margin_fixed_h(scalar_model(), eps=0.0)


def test_constant_multiplier_pins_lambda():
    res = margin_fixed_h(linear2d("modified"), barrier_h(), DegreeBudget(deg_lambda=0), DomainBall(5.0))
    assert res.ok and verified(res.certificate)
    assert res.lam.is_constant() and res.lam([0.0, 0.0]) == pytest.approx(1.0)


def test_margin_ceiling_with_pinned_lambda():
    # eta <= lambda(0) h(0) = 4.9 at the origin, whatever the degree
    res = margin_fixed_h(linear2d("modified"), barrier_h(), DegreeBudget(deg_lambda=2), DomainBall(5.0))
    assert res.ok
    assert res.eta <= 4.9 + 1e-5


@settings(max_examples=5)
@given(st.floats(0.5, 2.0), st.sampled_from([5.0, 10.0]))
def test_polynomial_multiplier_dominates_constant(c, radius):
    model = linear2d("modified")
    h = barrier_h() * c
    ball = DomainBall(radius)
    const = margin_fixed_h(model, h, DegreeBudget(deg_lambda=0), ball)
    poly = margin_fixed_h(model, h, DegreeBudget(deg_lambda=2), ball)
    assert const.ok and poly.ok
    assert poly.eta >= const.eta - 1e-6


def test_scaling_does_not_change_the_margin():
    model = linear2d("modified")
    a = margin_fixed_h(model, budget=DegreeBudget(deg_lambda=0), ball=DomainBall(5.0))
    b = margin_fixed_h(model, budget=DegreeBudget(deg_lambda=0), ball=DomainBall(5.0), scale=2.0)
    assert a.eta == pytest.approx(b.eta, abs=1e-5)


def test_scaled_model_is_conjugate():
    model = linear2d_stabilized()
    s = 4.0
    z = scaled_model(model, s)
    pt = np.array([0.3, -0.2])
    assert z.h(pt) == pytest.approx(model.h(s * pt))
    assert z.f[0](pt) == pytest.approx(model.f[0](s * pt) / s)


# alternating search


def test_search_with_zero_rounds_returns_first_step():
    model = linear2d("modified")
    budget = DegreeBudget(deg_lambda=2)
    ball = DomainBall(5.0)
    first = margin_fixed_h(model, barrier_h(), budget, ball)
    res = search_robust_cbf(model, None, budget, ball, max_rounds=0)
    assert res.rounds == 0
    assert res.eta == pytest.approx(first.eta, abs=1e-9)


def test_search_dominates_first_step_and_is_monotone():
    model = linear2d("modified")
    budget = DegreeBudget(deg_lambda=2)
    ball = DomainBall(5.0)
    first = margin_fixed_h(model, barrier_h(), budget, ball)
    res = search_robust_cbf(model, None, budget, ball, max_rounds=3)
    assert res.ok and verified(res.certificate)
    assert res.eta >= first.eta - 1e-6
    assert all(b >= a for a, b in zip(res.history, res.history[1:]))


def test_search_with_containment_set():
    x1, x2 = variables(2)
    c = 225 - x1**2 - x2**2
    model = linear2d("modified")
    res = search_robust_cbf(model, c, DegreeBudget(deg_lambda=2), DomainBall(5.0), max_rounds=2)
    assert res.ok and res.lam2 is not None
    names = [k.name for k in res.certificate.constraints]
    assert any("contain" in n for n in names)
    # S inside C on samples
    X = np.random.default_rng(0).uniform(-20, 20, (200_000, 2))
    hv, cv = PolyEvaluator([res.h, c])(X).T
    inside = hv >= 0
    assert inside.sum() > 10_000
    assert cv[inside].min() >= -1e-6


def test_search_rejects_uncertifiable_start():
    x1, x2 = variables(2)
    bad_h = 1 - x1**2 - x2**2 + 0.0 * x1
    with pytest.raises(RuntimeError, match="init_h not a certifiable CBF"):
        search_robust_cbf(linear2d("modified"), None, DegreeBudget(deg_lambda=0, deg_lambda1=0), GLOBAL,
                          init_h=-(x1**2) - x2**2 - 1 + bad_h * 0, max_rounds=1)


# validity checks


def test_global_check_finds_witnesses_on_the_line():
    rep = verify_cbf(linear2d("tan"), GLOBAL)
    assert not rep.valid and rep.witnesses
    for x, v in rep.witnesses:
        assert 0.15 * x[0] + 0.2 * x[1] == pytest.approx(0.0, abs=1e-7)
        assert v < 0


def test_ball_of_radius_five_is_certified():
    rep = verify_cbf(linear2d("tan"), DomainBall(5.0))
    assert rep.valid and rep.sos_certified and verified(rep.certificate)


def test_ball_of_radius_ten_is_not_certified_with_unit_multiplier():
    rep = verify_cbf(linear2d("tan"), DomainBall(10.0))
    assert not rep.valid
    # the worst point on the line sits on the ball boundary
    x, v = rep.witnesses[0]
    assert np.linalg.norm(x) == pytest.approx(10.0, abs=1e-4)
    assert v == pytest.approx(-2.1, abs=1e-4)


def test_disc_barrier_is_valid():
    rep = verify_cbf(disc_model(), GLOBAL)
    assert rep.valid


def test_verified_certificate_holds_on_dense_samples():
    rep = verify_cbf(linear2d("tan"), DomainBall(5.0))
    cert = rep.certificate
    for c in cert.constraints:
        ok, worst, used = sos.sampling_check(c, n_samples=100_000, box=10.0 / cert.coordinate_scale, seed=1)
        assert ok and used == 100_000


def test_barrier_condition_passes_without_input():
    (x,) = variables(1)
    rep = cbc_check(scalar_model(), [Polynomial.zero(1)], budget=DegreeBudget(deg_lambda=0))
    assert rep.valid and verified(rep.certificate)


def test_destabilizing_input_fails_with_witness():
    (x,) = variables(1)
    rep = cbc_check(scalar_model(), [5 * x], budget=DegreeBudget(deg_lambda=2), search_radius=2.0)
    assert not rep.valid and not rep.sos_certified
    xs = sorted(round(w[0][0], 6) for w in rep.witnesses)
    assert xs == [-1.0, 1.0]
    assert all(v == pytest.approx(-8.0, abs=1e-6) for _, v in rep.witnesses)


@settings(max_examples=8)
@given(st.floats(-6.0, 6.0))
def test_larger_multiplier_budget_never_loses(k):
    (x,) = variables(1)
    u = [k * x]
    low = cbc_check(scalar_model(), u, budget=DegreeBudget(deg_lambda=0), search_radius=2.0)
    high = cbc_check(scalar_model(), u, budget=DegreeBudget(deg_lambda=2), search_radius=2.0)
    assert not low.sos_certified or high.sos_certified


def test_cbc_check_needs_one_input_per_column():
    with pytest.raises(ValueError):
        cbc_check(scalar_model(), [])


# region of attraction


def test_clf_condition():
    assert check_clf_condition(linear2d_stabilized())
    assert not check_clf_condition(linear2d("modified"))


def test_roa_needs_modified_variant():
    with pytest.raises(ValueError):
        estimate_roa(linear2d("tan"))


def test_roa_warns_without_stabilizing_nominal():
    with pytest.warns(UserWarning):
        res = estimate_roa(linear2d("modified"), weight=10.0, max_rounds=0)
    assert res.eta >= 0
    if res.ok:
        assert verified(res.certificate)


def test_roa_level_is_certified_and_simulates():
    model = linear2d_stabilized()
    res = estimate_roa(model, weight=10.0, max_rounds=0)
    assert res.ok and verified(res.certificate)
    assert res.eta > 1.0
    assert all(b >= a for a, b in zip(res.history, res.history[1:]))
    X0 = grid_in_sublevel(model.V, res.eta, count=100)
    assert len(X0) >= 100
    trajs = integrate_batch(model, X0, SimConfig(T=50.0, dt=1e-2))
    for tr in trajs:
        assert analyze(tr, model).converged


def test_roa_region_encoding_keeps_zero_barrier_gradient():
    # the certified region {A >= 0, B >= 0} includes points where L_g h = 0
    model = linear2d_stabilized()
    res = estimate_roa(model, weight=10.0, max_rounds=0)
    claim = [c for c in res.certificate.constraints if c.name == "roa"][0]
    assert len(claim.ineqs) == 2 and not claim.eqs
