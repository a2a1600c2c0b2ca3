import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import linprog

from extdesign.lp import MaximinLP, MaximinSolver, RevisedSimplex, solve_maximin, solve_minmax_measure


def highs_maximin(h):
    """Reference optimum of max_w min_j (w @ h)_j from scipy's HiGHS."""
    ell, m = h.shape
    c = np.zeros(ell + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-h.T, np.ones((m, 1))])
    A_eq = np.concatenate([np.ones(ell), [0.0]])[None, :]
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(m), A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, None)] * ell + [(None, None)], method="highs")
    assert res.status == 0
    return -res.fun


def simplex_grid_maximin(h, step=0.02):
    """Brute force over the weight simplex on a regular grid."""
    ell = h.shape[0]
    n = int(round(1 / step))
    best = -np.inf
    for comb in itertools.product(range(n + 1), repeat=ell - 1):
        if sum(comb) > n:
            continue
        w = np.array(list(comb) + [n - sum(comb)]) / n
        best = max(best, float(np.min(w @ h)))
    return best


matrices = st.integers(0, 10_000).map(lambda s: np.random.default_rng(s).random(
    (int(np.random.default_rng(s).integers(2, 5)), int(np.random.default_rng(s + 1).integers(1, 7)))))


@given(matrices)
def test_maximin_matches_highs(h):
    sol = solve_maximin(MaximinLP(h))
    assert sol.status == "optimal"
    assert sol.t == pytest.approx(highs_maximin(h), abs=1e-9)
    assert np.all(sol.w >= 0) and sol.w.sum() == pytest.approx(1.0)
    assert sol.dual_value == pytest.approx(sol.t, abs=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_maximin_matches_simplex_grid_oracle(seed):
    h = np.random.default_rng(seed).random((3, 5))
    sol = solve_maximin(MaximinLP(h))
    grid = simplex_grid_maximin(h)
    assert grid - 1e-12 <= sol.t <= grid + 0.02


def test_incremental_columns_agree_with_fresh_solve():
    rng = np.random.default_rng(3)
    h = rng.random((6, 40))
    solver = MaximinSolver(6)
    solver.add(h[:, :5].T)
    solver.solve()
    for j in range(5, 40, 5):
        solver.add(h[:, j:j + 5].T)
        inc = solver.solve()
        fresh = solve_maximin(MaximinLP(h[:, :j + 5]))
        assert inc.t == pytest.approx(fresh.t, abs=1e-10)


def test_upper_bounds_are_non_increasing_under_constraint_generation():
    h = np.random.default_rng(11).random((4, 30))
    solver = MaximinSolver(4)
    values = []
    for j in range(30):
        solver.add(h[:, j][None, :])
        values.append(solver.solve().t)
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))


def test_extra_linear_constraints_are_respected():
    h = np.array([[1.0, 0.0], [0.0, 1.0]])
    sol = solve_maximin(MaximinLP(h, [(np.array([1.0, 0.0]), 0.3)]))
    assert sol.w[0] <= 0.3 + 1e-12
    assert sol.t == pytest.approx(0.3)


def test_degenerate_rows_give_zero_value():
    h = np.zeros((3, 4))
    h[0] = 1.0
    sol = solve_maximin(MaximinLP(h))
    assert sol.t == pytest.approx(1.0)
    sol = solve_maximin(MaximinLP(np.zeros((2, 2))))
    assert sol.t == pytest.approx(0.0)


def test_minmax_measure_is_the_dual_problem():
    psi = np.array([[1.0, -1.0], [-1.0, 1.0], [-0.5, -0.5]])
    mu, value = solve_minmax_measure(psi)
    assert value == pytest.approx(0.0, abs=1e-12)
    assert mu == pytest.approx([0.5, 0.5])


def test_revised_simplex_standard_form():
    # minimise -x1 - 2 x2 s.t. x1 + x2 + s1 = 4, x2 + s2 = 3
    A = np.array([[1.0, 1.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0]])
    res = RevisedSimplex(A, np.array([4.0, 3.0]), np.array([-1.0, -2.0, 0.0, 0.0])).solve()
    assert res.status == "optimal"
    assert res.objective == pytest.approx(-7.0)
    assert res.x[:2] == pytest.approx([1.0, 3.0])


def test_invalid_inputs():
    with pytest.raises(ValueError):
        MaximinLP(np.array([[np.inf]]))
    solver = MaximinSolver(2)
    with pytest.raises(ValueError):
        solver.add(np.ones((1, 3)))
    with pytest.raises(ValueError):
        solver.solve()


def test_one_huge_constraint_does_not_hide_small_improvements():
    rng = np.random.default_rng(7)
    h = 27.0 + 30.0 * rng.random((8, 30))
    h[:, 0] = 6e4 * rng.random(8)
    h[:, 1] = 27.2 + 1e-4 * rng.random(8)
    sol = solve_maximin(MaximinLP(h))
    assert sol.t == pytest.approx(highs_maximin(h), rel=1e-12)


@pytest.mark.parametrize("magnitude", [1e-6, 1e-3, 1e3])
def test_small_and_large_optimal_values_are_resolved(magnitude):
    rng = np.random.default_rng(11)
    h = magnitude * (1.0 + rng.random((8, 25)))
    h[:, 0] = 1e3 * magnitude * rng.random(8)
    sol = solve_maximin(MaximinLP(h))
    assert sol.t == pytest.approx(highs_maximin(h), rel=1e-10)
