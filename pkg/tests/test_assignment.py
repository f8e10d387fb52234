import numpy as np
import pytest

from ttdbeam.assignment import (Assignment, CostMatrix, brute_force_assignment,
                                hungarian_max, hungarian_min, optimal_permutation)


def test_identity_dominant_matrix():
    n = 6
    C = np.zeros((n, n))
    np.fill_diagonal(C, 10.0)
    result = hungarian_max(C)
    assert np.array_equal(result.permutation, np.arange(n))
    assert result.total_cost == pytest.approx(10.0 * n)


def test_two_by_two_example():
    result = hungarian_max(np.array([[1.0, 2.0], [3.0, 1.0]]))
    assert np.array_equal(result.permutation, [1, 0])
    assert result.total_cost == 5.0


def test_matches_brute_force_small_sizes():
    rng = np.random.default_rng(0)
    for n in range(2, 8):
        for _ in range(40):
            C = rng.uniform(-5, 5, size=(n, n))
            h = hungarian_max(C)
            b = brute_force_assignment(C)
            assert h.total_cost == b.total_cost
            assert np.array_equal(h.permutation, b.permutation)


def test_all_equal_matrix_tie_break():
    C = np.full((4, 4), 3.0)
    h = hungarian_max(C)
    b = brute_force_assignment(C)
    assert h.total_cost == b.total_cost == 12.0
    assert np.array_equal(h.permutation, np.arange(4))   # lexicographically smallest
    assert np.array_equal(b.permutation, np.arange(4))


def test_integer_ties_lexicographic():
    # two optimal permutations; the lexicographically smallest must win
    C = np.array([[2.0, 2.0], [1.0, 1.0]])
    result = hungarian_max(C)
    assert np.array_equal(result.permutation, [0, 1])
    assert result.total_cost == 3.0


def test_brute_force_trivial_and_limits():
    assert brute_force_assignment(np.array([[4.2]])).total_cost == 4.2
    with pytest.raises(ValueError):
        brute_force_assignment(np.zeros((10, 10)))


def test_optimality_against_random_permutations():
    rng = np.random.default_rng(1)
    C = rng.normal(size=(9, 9))
    best = hungarian_max(C).total_cost
    rows = np.arange(9)
    for _ in range(1000):
        perm = rng.permutation(9)
        assert best >= np.sum(C[rows, perm]) - 1e-12


def test_row_shift_keeps_permutation_optimal():
    rng = np.random.default_rng(2)
    C = rng.normal(size=(6, 6))
    perm = hungarian_max(C).permutation
    C2 = C.copy()
    C2[3] += 7.5
    best2 = hungarian_max(C2).total_cost
    rows = np.arange(6)
    assert np.sum(C2[rows, perm]) == pytest.approx(best2, rel=1e-12)


def test_max_min_duality():
    rng = np.random.default_rng(3)
    C = rng.normal(size=(7, 7))
    mx = hungarian_max(C)
    mn = hungarian_min(-C)
    assert mx.total_cost == pytest.approx(-mn.total_cost, rel=1e-12)
    assert np.array_equal(mx.permutation, mn.permutation)


def test_fast_path_matches_refined_value():
    rng = np.random.default_rng(4)
    for n in (3, 5, 8, 12):
        C = rng.normal(size=(n, n))
        perm = optimal_permutation(C)
        assert np.sum(C[np.arange(n), perm]) == pytest.approx(
            hungarian_max(C).total_cost, rel=1e-12)


def test_rejects_bad_matrices():
    with pytest.raises(ValueError):
        hungarian_max(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        hungarian_max(np.array([[np.inf, 1.0], [1.0, 2.0]]))


def test_cost_matrix_type_and_assignment_invariant():
    cm = CostMatrix.from_array([[1.0, 0.0], [0.0, 1.0]])
    assert cm.n == 2
    result = hungarian_max(cm)
    assert isinstance(result, Assignment)
    with pytest.raises(ValueError):
        Assignment(np.array([0, 0]), 1.0)
