import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prfmpc.qp import QPSolverError, solve_qp

import oracles


def random_feasible(seed, n=6, m=10, n_eq=0):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, n))
    P = M @ M.T + 0.1 * np.eye(n)
    q = rng.standard_normal(n) * 3
    x_feas = rng.standard_normal(n)
    G = rng.standard_normal((m, n))
    h = G @ x_feas + rng.uniform(0.0, 1.0, m)
    A = rng.standard_normal((n_eq, n))
    b = A @ x_feas
    return P, q, G, h, A, b


@pytest.mark.parametrize("seed", range(100))
def test_kkt_residuals_random_instances(seed):
    n_eq = seed % 3
    P, q, G, h, A, b = random_feasible(seed, n=4 + seed % 8, m=3 + seed % 17, n_eq=n_eq)
    res = solve_qp(P, q, G, h, A, b)
    assert res.status == "optimal"
    stat, primal, dual, comp = oracles.kkt_residuals(P, q, G, h, res.x, res.z, A, b, res.y)
    assert max(stat, primal, dual, comp) <= 1e-6


@pytest.mark.parametrize("seed", range(30))
def test_three_variable_instances_match_brute_force(seed):
    P, q, G, h, _, _ = random_feasible(1000 + seed, n=3, m=5)
    res = solve_qp(P, q, G, h)
    assert res.status == "optimal"
    x_enum, obj_enum = oracles.enumerate_qp(P, q, G, h)
    assert res.objective == pytest.approx(obj_enum, abs=1e-6)
    assert np.allclose(res.x, x_enum, atol=1e-5)
    x_proj, obj_proj = oracles.dykstra_qp(P, q, G, h)
    assert abs(obj_proj - res.objective) <= 1e-3
    assert np.allclose(res.x, x_proj, atol=1e-3)
    # any feasible grid point is an upper bound; a coarse grid lands close to it
    lo, hi = np.min(x_enum) - 2.0, np.max(x_enum) + 2.0
    grid = oracles.grid_min(P, q, G, h, lo, hi, n=31, rounds=6, shrink=2.0)
    assert res.objective - 1e-9 <= grid <= res.objective + 0.1 * (1 + abs(res.objective))


def test_unconstrained_minimiser():
    P = np.diag([2.0, 4.0])
    q = np.array([-2.0, 4.0])
    res = solve_qp(P, q)
    assert np.allclose(res.x, [1.0, -1.0])
    assert res.objective == pytest.approx(-3.0)


def test_single_active_bound():
    # min (x - 2)^2 s.t. x <= 1
    res = solve_qp([[2.0]], [-4.0], [[1.0]], [1.0])
    assert res.x[0] == pytest.approx(1.0)
    assert res.z[0] == pytest.approx(2.0)


@pytest.mark.parametrize("G,h", [
    ([[1.0, 0.0], [-1.0, 0.0]], [-1.0, -1.0]),            # x1 <= -1 and x1 >= 1
    ([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]], [-1.0, 0.0, 0.0]),  # sum <= -1 with x >= 0
    ([[0.0, 0.0]], [-1e-3]),                               # 0 <= -0.001
])
def test_constructed_infeasible(G, h):
    res = solve_qp(np.eye(2), np.zeros(2), G, h)
    assert res.status == "infeasible"
    assert res.x is None


def test_infeasible_equality_and_inequality():
    res = solve_qp(np.eye(2), np.zeros(2), [[1.0, 0.0]], [0.0], [[1.0, 0.0]], [1.0])
    assert res.status == "infeasible"


def test_zero_row_with_slack_is_ignored():
    res = solve_qp(np.eye(2), -np.ones(2), [[0.0, 0.0]], [1.0])
    assert res.status == "optimal"
    assert np.allclose(res.x, [1.0, 1.0])


def test_indefinite_hessian_raises():
    with pytest.raises(QPSolverError):
        solve_qp(np.diag([1.0, -1.0]), np.zeros(2))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 6), st.integers(1, 12))
def test_never_returns_violating_point(seed, n, m):
    # instances may or may not be feasible; any returned point must satisfy all rows
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, n))
    P = M @ M.T + 0.1 * np.eye(n)
    q = rng.standard_normal(n)
    G = rng.standard_normal((m, n))
    h = rng.standard_normal(m)
    res = solve_qp(P, q, G, h)
    if res.status == "optimal":
        assert np.max(G @ res.x - h) <= 1e-6
        stat, primal, dual, comp = oracles.kkt_residuals(P, q, G, h, res.x, res.z)
        assert max(stat, primal, dual, comp) <= 1e-6
    else:
        x_enum, _ = oracles.enumerate_qp(P, q, G, h) if n <= 4 and m <= 8 else (None, None)
        assert x_enum is None
