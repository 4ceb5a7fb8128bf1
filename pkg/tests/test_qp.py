import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from havok_mpc.errors import ConvergenceError
from havok_mpc.qp import kkt_residual, max_eigenvalue, objective, solve_box_qp
from oracles import box_qp_enumeration


def random_box_qp(rng, n):
    M = rng.standard_normal((n, n))
    H = M @ M.T + 0.1 * np.eye(n)
    g = rng.standard_normal(n) * 3
    lb = -rng.uniform(0.1, 2.0, n)
    ub = rng.uniform(0.1, 2.0, n)
    return H, g, lb, ub


def test_examples():
    sol = solve_box_qp(np.eye(2), [-1.0, -1.0], 0.0, 0.5)
    np.testing.assert_allclose(sol.u, [0.5, 0.5], atol=1e-10)
    sol = solve_box_qp(2 * np.eye(3), np.zeros(3), -1.0, 1.0)
    np.testing.assert_allclose(sol.u, 0, atol=1e-12)
    assert sol.iterations == 0


def test_coupled_example_matches_enumeration():
    H = np.array([[2.0, 1.0], [1.0, 2.0]])
    g = np.array([-2.0, -3.0])
    sol = solve_box_qp(H, g, 0.0, 1.0)
    ref = box_qp_enumeration(H, g, np.zeros(2), np.ones(2))
    # unconstrained optimum (1/3, 4/3) is outside; u2 hits 1, then u1 = 1/2
    np.testing.assert_allclose(ref, [0.5, 1.0], atol=1e-12)
    np.testing.assert_allclose(sol.u, ref, atol=1e-7)


def test_random_instances_match_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(500):
        n = int(rng.integers(1, 4))
        H, g, lb, ub = random_box_qp(rng, n)
        sol = solve_box_qp(H, g, lb, ub)
        ref = box_qp_enumeration(H, g, lb, ub)
        assert np.max(np.abs(sol.u - ref)) < 1e-7
        assert kkt_residual(H, g, lb, ub, sol.u) < 1e-8


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_solution_is_feasible_and_stationary(n, seed):
    H, g, lb, ub = random_box_qp(np.random.default_rng(seed), n)
    sol = solve_box_qp(H, g, lb, ub)
    assert np.all(sol.u >= lb) and np.all(sol.u <= ub)
    assert sol.residual < 1e-8
    assert kkt_residual(H, g, lb, ub, sol.u) < 1e-8


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_warm_start_consistency(n, seed):
    H, g, lb, ub = random_box_qp(np.random.default_rng(seed), n)
    cold = solve_box_qp(H, g, lb, ub)
    warm = solve_box_qp(H, g, lb, ub, warm_start=cold.u)
    assert np.max(np.abs(warm.u - cold.u)) < 1e-10
    assert warm.iterations <= cold.iterations


def test_convergence_error_carries_best_iterate():
    rng = np.random.default_rng(3)
    H, g, lb, ub = random_box_qp(rng, 30)
    warm = np.full(30, 5.0)
    with pytest.raises(ConvergenceError) as exc:
        solve_box_qp(H, g, lb, ub, warm_start=warm, max_iter=0)
    err = exc.value
    # the clipped warm start is the only iterate seen
    np.testing.assert_array_equal(err.best, np.clip(warm, lb, ub))
    assert err.residual == pytest.approx(kkt_residual(H, g, lb, ub, err.best))
    assert err.iterations == 0


def test_max_eigenvalue_and_objective():
    H = np.diag([1.0, 4.0, 2.5])
    assert max_eigenvalue(H) == pytest.approx(4.0, rel=1e-8)
    assert objective(np.eye(2), [1.0, 0.0], [2.0, 1.0]) == pytest.approx(0.5 * 5 + 2)
