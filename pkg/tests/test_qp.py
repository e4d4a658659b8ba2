import numpy as np
import pytest
from hypothesis import given, strategies as st

from energybal.balancing import ebw_problem, iebw_problem
from energybal.data import Sample
from energybal.energy import distance_matrix
from energybal.qp import (CONVERGED, MAX_ITER, InfeasibleProblem, QuadraticProgram, feasible_start,
                          kkt_residuals, project_simplex, solve_qp)
from oracles import projected_gradient, simplex_projection


def ebw_instance(n, p=1, seed=0, improved=False):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    A = np.zeros(n, int)
    A[rng.permutation(n)[: max(2, n // 2)]] = 1
    s = Sample(X, A)
    D = distance_matrix(X)
    return (iebw_problem if improved else ebw_problem)(s, D)


def test_strictly_convex_example():
    prob = QuadraticProgram(2 * np.eye(2), np.array([-2.0, -2.0]), [([0, 1], 2.0)])
    sol = solve_qp(prob)
    assert sol.status == CONVERGED
    np.testing.assert_allclose(sol.w, [1, 1], atol=1e-9)
    assert sol.objective == pytest.approx(-2.0, abs=1e-12)


def test_symmetric_ebw_example():
    s = Sample([0.0, 1.0, 0.0, 1.0], [1, 1, 0, 0])
    sol = solve_qp(ebw_problem(s, distance_matrix(s.X)))
    np.testing.assert_allclose(sol.w, 1.0, atol=1e-8)


def test_random_n6_against_oracle():
    prob = ebw_instance(6, seed=11)
    sol = solve_qp(prob)
    _, f = projected_gradient(prob, starts=50)
    assert sol.objective <= f + 1e-4 and sol.objective >= f - 1e-4


@pytest.mark.parametrize("sizes,sums,expect", [
    ([4], [4], [1, 1, 1, 1]), ([3], [3], [1, 1, 1]), ([2, 3], [2, 3], [1] * 5),
    ([2, 2], [1, 6], [0.5, 0.5, 3, 3]),
])
def test_feasible_start(sizes, sums, expect):
    groups, k = [], 0
    for m, s in zip(sizes, sums):
        groups.append((np.arange(k, k + m), s))
        k += m
    prob = QuadraticProgram(np.zeros((k, k)), np.zeros(k), groups)
    np.testing.assert_array_equal(feasible_start(prob), expect)


def test_empty_group_infeasible():
    with pytest.raises((InfeasibleProblem, ValueError)):
        solve_qp(QuadraticProgram(np.zeros((2, 2)), np.zeros(2), [([0, 1], 2.0), ([], 1.0)]))


def test_problem_validation():
    with pytest.raises(ValueError, match="symmetric"):
        QuadraticProgram(np.array([[0.0, 1.0], [0.0, 0.0]]), np.zeros(2), [([0, 1], 1.0)])
    with pytest.raises(ValueError, match="exactly one"):
        QuadraticProgram(np.zeros((2, 2)), np.zeros(2), [([0], 1.0)])
    with pytest.raises(ValueError, match="positive"):
        QuadraticProgram(np.zeros((2, 2)), np.zeros(2), [([0, 1], 0.0)])


@given(st.integers(0, 100_000), st.integers(1, 30), st.floats(0.1, 50))
def test_project_simplex_matches_bisection(seed, m, s):
    v = np.random.default_rng(seed).normal(size=m) * 3
    x = project_simplex(v, s)
    assert x.min() >= 0 and abs(x.sum() - s) < 1e-9 * max(1, s)
    np.testing.assert_allclose(x, simplex_projection(v, s), atol=1e-8)


def test_kkt_examples():
    prob = ebw_instance(8, seed=3)
    sol = solve_qp(prob, tol=1e-7)
    assert max(kkt_residuals(prob, sol.w)) <= 10 * 1e-7
    # uniform weights are not optimal on an asymmetric instance
    stat, primal, _ = kkt_residuals(prob, feasible_start(prob))
    assert stat > 1e-7 and primal < 1e-12
    w = feasible_start(prob)
    w[prob.groups[0][0][0]] += 0.5
    assert kkt_residuals(prob, w)[1] == pytest.approx(0.5)


@given(st.integers(0, 100_000), st.integers(4, 14), st.booleans())
def test_solution_invariants(seed, n, improved):
    prob = ebw_instance(n, p=2, seed=seed, improved=improved)
    sol = solve_qp(prob)
    assert sol.status == CONVERGED
    assert sol.w.min() >= -1e-10
    for idx, s in prob.groups:
        assert abs(sol.w[idx].sum() - s) <= 1e-7
    assert abs(sol.objective - prob.objective(sol.w)) <= 1e-10
    assert sol.objective <= prob.objective(feasible_start(prob)) + 1e-7
    assert max(kkt_residuals(prob, sol.w)) <= 1e-6


def test_determinism():
    prob = ebw_instance(40, p=3, seed=5, improved=True)
    a, b = solve_qp(prob), solve_qp(prob)
    assert np.array_equal(a.w, b.w) and a.iterations == b.iterations


@given(st.integers(0, 100_000), st.integers(4, 20), st.booleans())
def test_restricted_convexity(seed, n, improved):
    prob = ebw_instance(n, p=3, seed=seed, improved=improved)
    v = np.random.default_rng(seed).normal(size=n)
    for idx, _ in prob.groups:
        v[idx] -= v[idx].mean()
    assert v @ prob.P @ v >= -1e-8 * (v @ v)


def test_max_iter_status():
    prob = ebw_instance(30, p=2, seed=2)
    sol = solve_qp(prob, max_iter=3, polish=False)
    assert sol.status == MAX_ITER
    assert sol.objective <= prob.objective(feasible_start(prob)) + 1e-7
