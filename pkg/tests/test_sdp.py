import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cbfsos import sdp
from cbfsos.sdp import NotSymmetricError, SdpInstance, project_psd, residuals, solve
from oracles import cvxpy_solve


def sym_entries(k, M, row=None):
    """Upper-triangle triples of a symmetric matrix for block k."""
    out = []
    s = M.shape[0]
    for i in range(s):
        for j in range(i, s):
            if M[i, j] != 0.0:
                out.append((k, i, j, float(M[i, j])) if row is None else (row, k, i, j, float(M[i, j])))
    return out


def random_instance(seed: int, sizes=(3, 2, -2), rows=5, eps=0.2) -> SdpInstance:
    """Feasible and bounded by construction: an interior X fixes b, and
    C = A^T y0 + S0 with S0 positive definite."""
    rng = np.random.default_rng(seed)

    def block(s):
        if s < 0:
            return np.diag(rng.uniform(eps, 1 + eps, -s))
        R = rng.standard_normal((s, s))
        return R @ R.T / s + eps * np.eye(s)

    def sym(s):
        if s < 0:
            return np.diag(rng.standard_normal(-s))
        R = rng.standard_normal((s, s))
        return (R + R.T) / 2

    X0 = [block(s) for s in sizes]
    A_mats = [[sym(s) for s in sizes] for _ in range(rows)]
    b = np.array([sum(np.sum(Ak * Xk) for Ak, Xk in zip(Ar, X0)) for Ar in A_mats])
    y0 = rng.standard_normal(rows)
    S0 = [block(s) for s in sizes]
    C_mats = [sum(y0[r] * A_mats[r][k] for r in range(rows)) + S0[k] for k in range(len(sizes))]
    A = [e for r in range(rows) for k in range(len(sizes)) for e in sym_entries(k, A_mats[r][k], row=r)]
    C = [e for k in range(len(sizes)) for e in sym_entries(k, C_mats[k])]
    return SdpInstance(list(sizes), b, A, C)


def sos_square_instance():
    """(x1 + x2)^2 = z^T Q z with z = (x1, x2): Q11 = 1, 2 Q12 = 2, Q22 = 1."""
    A = [(0, 0, 0, 0, 1.0), (1, 0, 0, 1, 1.0), (2, 0, 1, 1, 1.0)]
    return SdpInstance([2], np.array([1.0, 2.0, 1.0]), A)


# project_psd


def test_project_clips_negative_eigenvalue():
    assert np.allclose(project_psd(np.diag([1.0, -2.0])), np.diag([1.0, 0.0]))


def test_project_swap_matrix():
    assert np.allclose(project_psd(np.array([[0.0, 1.0], [1.0, 0.0]])), 0.5 * np.ones((2, 2)))


def test_project_rejects_asymmetric():
    with pytest.raises(NotSymmetricError):
        project_psd(np.array([[0.0, 1.0], [0.0, 0.0]]))


@given(st.integers(1, 6), st.integers(0, 10_000))
def test_projection_properties(s, seed):
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((s, s))
    M = (R + R.T) / 2
    P = project_psd(M)
    assert np.linalg.eigvalsh(P).min() >= -1e-12
    assert np.linalg.norm(project_psd(P) - P) <= 1e-10
    G = R @ R.T
    assert np.linalg.norm(project_psd(G) - G) <= 1e-10 * max(1.0, np.linalg.norm(G))


# solve


def test_scalar_lower_bound():
    # min x subject to x - s = 1 with x, s >= 0
    inst = SdpInstance([-2], np.array([1.0]), [(0, 0, 0, 0, 1.0), (0, 0, 1, 1, -1.0)], [(0, 0, 0, 1.0)])
    sol = solve(inst)
    assert sol.status == sdp.OPTIMAL
    assert sol.X[0][0, 0] == pytest.approx(1.0, abs=1e-6)
    assert sol.objective == pytest.approx(1.0, abs=1e-6)


def test_known_sos_feasibility():
    sol = solve(sos_square_instance())
    assert sol.status == sdp.OPTIMAL
    assert np.allclose(sol.X[0], np.ones((2, 2)), atol=1e-6)
    assert sol.primal_residual <= 1e-6


def test_infeasible_is_reported():
    # X psd with X11 = -1
    inst = SdpInstance([2], np.array([-1.0]), [(0, 0, 0, 0, 1.0)])
    assert solve(inst, max_iter=20_000).status == sdp.INFEASIBLE


def test_free_block_allows_negative_values():
    # minimize x with x free and x = -3
    inst = SdpInstance([-1], np.array([-3.0]), [(0, 0, 0, 0, 1.0)], [(0, 0, 0, 1.0)], free_blocks=(0,))
    sol = solve(inst)
    assert sol.status == sdp.OPTIMAL
    assert sol.X[0][0, 0] == pytest.approx(-3.0, abs=1e-6)


def test_free_block_must_be_diagonal():
    with pytest.raises(ValueError):
        SdpInstance([2], np.array([1.0]), [(0, 0, 0, 0, 1.0)], free_blocks=(0,))


def test_tolerance_must_be_positive():
    with pytest.raises(ValueError):
        solve(sos_square_instance(), tol=0.0)


def test_json_round_trip():
    inst = random_instance(3)
    back = SdpInstance.from_json(inst.to_json())
    assert back == inst or back.to_json() == inst.to_json()


def test_deterministic():
    inst = random_instance(7)
    a, b = solve(inst), solve(inst)
    assert a.status == b.status
    assert a.objective == pytest.approx(b.objective, abs=1e-12)
    assert all(np.array_equal(x, y) for x, y in zip(a.X, b.X))


@pytest.mark.parametrize("seed", range(20))
def test_random_library(seed):
    inst = random_instance(seed)
    sol = solve(inst, tol=1e-8)
    assert sol.status == sdp.OPTIMAL
    pres, dres, gap = residuals(inst, sol.X, sol.y)
    assert pres <= 10 * 1e-8
    for s, X in zip(inst.block_sizes, sol.X):
        eigs = np.diag(X) if s < 0 else np.linalg.eigvalsh(X)
        assert eigs.min() >= -10 * 1e-8
    tight = solve(inst, tol=1e-11)
    assert abs(sol.objective - tight.objective) <= 1e-5 * max(1.0, abs(tight.objective))
    status, value, _ = cvxpy_solve(inst)
    assert status == "optimal"
    assert sol.objective == pytest.approx(value, rel=1e-5, abs=1e-6)
