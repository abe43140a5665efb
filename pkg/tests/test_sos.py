import copy

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cbfsos import sdp, sos
from cbfsos.poly import Polynomial, monomial_basis, variables
from cbfsos.sos import (
    AffineExpr,
    BilinearityError,
    DecisionPoly,
    DegreeError,
    GramCertificate,
    SosProgram,
    compile,
    newton_basis,
    s_procedure,
    solve_program,
    verify_certificate,
)
from oracles import cvxpy_solve


def motzkin():
    x1, x2 = variables(2)
    return x1**4 * x2**2 + x1**2 * x2**4 - 3 * x1**2 * x2**2 + 1


def random_sos_quartic(seed: int, terms: int = 3) -> Polynomial:
    rng = np.random.default_rng(seed)
    basis = monomial_basis(2, 2)
    out = Polynomial.zero(2)
    for _ in range(terms):
        q = Polynomial(2, dict(zip(basis, rng.standard_normal(len(basis)))))
        out = out + q * q
    return out


def certify(p: Polynomial):
    prog = SosProgram(p.nvars)
    prog.add_sos(p, name="p")
    return solve_program(prog)


# decision polynomials


def test_decision_poly_counts():
    assert len(SosProgram(2).decision_poly(1).support()) == 3
    prog = SosProgram(2)
    prog.decision_poly(2)
    assert len(prog.variables) == 6
    p = SosProgram(1).decision_poly(2, parity="even")
    assert sorted(p.support()) == [(0,), (2,)]


def test_bilinear_products_are_rejected():
    prog = SosProgram(2)
    a = prog.decision_poly(1, name="a")
    b = prog.decision_poly(1, name="b")
    with pytest.raises(BilinearityError):
        a * b
    x1, _ = variables(2)
    assert (a * x1).has_variables()


def test_affine_arithmetic():
    prog = SosProgram(1)
    v = prog.new_var("v")
    e = 2 * v + 3 - v
    assert e.value({0: 5.0}) == pytest.approx(8.0)


# s-procedure


def test_s_procedure_constant_multiplier():
    (x,) = variables(1)
    prog = SosProgram(1)
    con, (lam,) = s_procedure(prog, 2 - x**2, [1 - x**2], [0])
    cert, sol = solve_program(prog)
    assert cert is not None and verify_certificate(cert).passed
    lam_val = cert.poly(lam)
    assert lam_val.degree <= 0
    # (2 - lam) + (lam - 1) x^2 is SOS exactly for 1 <= lam <= 2
    assert 1 - 1e-6 <= lam_val([0.0]) <= 2 + 1e-6


def test_s_procedure_infeasible():
    (x,) = variables(1)
    prog = SosProgram(1)
    s_procedure(prog, Polynomial.constant(-1.0, 1), [1 - x**2], [2])
    cert, sol = solve_program(prog, max_iter=50_000)
    assert cert is None or not verify_certificate(cert).passed


def test_s_procedure_rejects_odd_top_degree():
    (x,) = variables(1)
    with pytest.raises(DegreeError):
        s_procedure(SosProgram(1), x**3, [x], [0])


def test_s_procedure_needs_one_degree_per_constraint():
    (x,) = variables(1)
    with pytest.raises(ValueError):
        s_procedure(SosProgram(1), x**2, [x, x], [0])


# compile


def test_compile_single_square():
    (x,) = variables(1)
    prog = SosProgram(1)
    prog.add_sos(x**2, basis=[(0,), (1,)])
    inst = compile(prog)
    assert inst.block_sizes == [2]
    assert inst.num_rows == 3


def test_compile_is_deterministic():
    prog = SosProgram(2)
    p = prog.decision_poly(2)
    prog.add_sos(p + random_sos_quartic(0))
    prog.set_objective(p.coefficient((0, 0)), "max")
    a, b = compile(prog), compile(prog)
    assert a.to_json() == b.to_json()


def test_compiled_program_matches_cvxpy():
    prog = SosProgram(2)
    t = prog.new_var("t")
    prog.add_sos(DecisionPoly.lift(random_sos_quartic(4)) - DecisionPoly.constant(t, 2), name="p-t")
    prog.set_objective(t, "max")
    inst = compile(prog)
    sol = sdp.solve(inst)
    status, value, _ = cvxpy_solve(inst)
    assert sol.status == sdp.OPTIMAL and status == "optimal"
    assert sol.objective == pytest.approx(value, rel=1e-5, abs=1e-5)


def test_newton_basis_prunes():
    x1, x2 = variables(2)
    basis = newton_basis((x1**2 * x2**2 + 1).monomials(), 2)
    assert (2, 0) not in basis and (1, 1) in basis and (0, 0) in basis
    with pytest.raises(DegreeError):
        newton_basis((x1**3).monomials(), 2)


def test_program_json_round_trip():
    prog = SosProgram(2)
    p = prog.decision_poly(2)
    prog.add_sos(p)
    prog.add_equality(p.coefficient((0, 0)), 1.0)
    back = SosProgram.from_json(prog.to_json())
    assert compile(back).to_json() == compile(prog).to_json()


# recover and verify


def test_perfect_square_round_trip():
    x1, x2 = variables(2)
    cert, sol = certify((x1 + x2) ** 2)
    assert cert is not None
    rep = verify_certificate(cert)
    assert rep.passed and rep.residual <= 1e-8 and rep.min_eig >= -1e-8
    Q = cert.constraints[0].gram
    assert np.allclose(Q, [[1, 1], [1, 1]], atol=1e-6)


def test_zero_polynomial():
    cert, _ = certify(Polynomial.zero(2))
    assert cert is not None and verify_certificate(cert).passed


def test_motzkin_has_no_certificate():
    cert, sol = certify(motzkin())
    assert cert is None and sol.status == sdp.INFEASIBLE
    # it is nonnegative all the same
    X = np.random.default_rng(0).uniform(-2, 2, size=(100_000, 2))
    x1, x2 = X[:, 0], X[:, 1]
    assert np.min(x1**4 * x2**2 + x1**2 * x2**4 - 3 * x1**2 * x2**2 + 1) >= 0


def test_corrupted_gram_fails_identity():
    x1, x2 = variables(2)
    cert, _ = certify((x1 + x2) ** 2)
    bad = copy.deepcopy(cert)
    bad.constraints[0].gram[0, 0] += 0.1
    rep = verify_certificate(bad)
    assert not rep.passed
    assert rep.residual == pytest.approx(0.1, abs=1e-6)


def test_indefinite_gram_fails_eigenvalue():
    x1, x2 = variables(2)
    Q = np.array([[1.0, 1.5], [1.5, 1.0]])  # eigenvalues 2.5, -0.5
    expr = x1**2 + 3 * x1 * x2 + x2**2
    c = sos.ConstraintCertificate("indef", [(1, 0), (0, 1)], Q, expr)
    rep = verify_certificate(GramCertificate("optimal", {}, [c]))
    assert not rep.passed
    assert rep.min_eig == pytest.approx(-0.5)
    assert "eigenvalue" in rep.reason


def test_certificate_json_round_trip():
    cert, _ = certify(random_sos_quartic(1))
    back = GramCertificate.from_json(cert.to_json())
    assert verify_certificate(back).passed
    assert back.to_json() == cert.to_json()


@pytest.mark.parametrize("seed", range(5))
def test_random_sos_quartics_certify(seed):
    cert, _ = certify(random_sos_quartic(seed))
    rep = verify_certificate(cert)
    assert rep.passed and rep.residual <= 1e-6 and rep.min_eig >= -1e-7


@given(st.integers(0, 1000))
def test_certified_expression_is_reconstructed(seed):
    cert, _ = certify(random_sos_quartic(seed, terms=2))
    assert cert is not None
    c = cert.constraints[0]
    assert (c.expression - c.gram_polynomial()).max_abs_coeff() <= sos.TOL_IDENTITY


@given(st.integers(0, 1000))
def test_s_procedure_certificates_hold_on_samples(seed):
    # p0 = r^2 - |x|^2 + q on the unit disc, with q SOS; certified via the s-procedure
    x1, x2 = variables(2)
    r2 = np.random.default_rng(seed).uniform(1.0, 3.0)
    disc = 1 - x1**2 - x2**2
    p0 = r2 - x1**2 - x2**2 + 0.1 * random_sos_quartic(seed, terms=1)
    prog = SosProgram(2)
    s_procedure(prog, p0, [disc], [2])
    cert, _ = solve_program(prog)
    assert cert is not None and verify_certificate(cert).passed
    ok, worst, used = sos.sampling_check(cert.constraints[-1], n_samples=2000, box=1.0)
    assert ok and used == 2000
