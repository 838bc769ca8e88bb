import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dagagg.numerics import (DimensionMismatch, NotPSD, SecondMomentMatrix, min_eigenvalue,
                             solve_least_squares, tridiag_suffix_mse, tridiagonal_gram)


def test_two_by_two_by_hand():
    # w = C^-1 c = [1/3, 2/3], mse = 1 - 2/3
    sol = solve_least_squares([[2.0, -1.0], [-1.0, 2.0]], [0.0, 1.0], 1.0)
    np.testing.assert_allclose(sol.weights, [1 / 3, 2 / 3], atol=1e-14)
    assert sol.achieved_mse == pytest.approx(1 / 3, abs=1e-14)
    assert sol.effective_rank == 2


def test_empty_inputs_return_target_moment():
    sol = solve_least_squares(np.zeros((0, 0)), [], 2.5)
    assert sol.achieved_mse == 2.5
    assert sol.weights.shape == (0,)


def test_duplicated_column_gives_minimum_norm_split():
    # x and a copy of x: min-norm solution splits the weight evenly
    sol = solve_least_squares([[1.0, 1.0], [1.0, 1.0]], [1.0, 1.0], 1.0)
    np.testing.assert_allclose(sol.weights, [0.5, 0.5], atol=1e-12)
    assert sol.effective_rank == 1
    assert sol.achieved_mse == pytest.approx(0.0, abs=1e-12)


def test_errors():
    with pytest.raises(DimensionMismatch):
        solve_least_squares(np.eye(2), [1.0, 2.0, 3.0], 1.0)
    with pytest.raises(DimensionMismatch):
        solve_least_squares(np.ones((2, 3)), [1.0, 2.0], 1.0)
    with pytest.raises(NotPSD):
        solve_least_squares([[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0], 1.0)
    with pytest.raises(DimensionMismatch):
        SecondMomentMatrix(np.ones((2, 3)), ["a", "b"])


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 6), m=st.integers(1, 40), seed=st.integers(0, 2**31 - 1))
def test_matches_pseudoinverse(n, m, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((m, n))
    if n > 1 and m > 2:
        X[:, -1] = X[:, 0]  # force a collinear column
    y = rng.standard_normal(m)
    g, c, t = X.T @ X / m, X.T @ y / m, y @ y / m
    sol = solve_least_squares(g, c, t)
    ref = np.linalg.pinv(X, rcond=1e-10) @ y
    np.testing.assert_allclose(X @ sol.weights, X @ ref, atol=1e-7)
    assert sol.achieved_mse == pytest.approx(np.mean((y - X @ ref) ** 2), abs=1e-8)
    # residual orthogonal to every column
    np.testing.assert_allclose(X.T @ (y - X @ sol.weights) / m, 0.0, atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(a=arrays(np.float64, (4, 4), elements=st.floats(-3, 3)))
def test_min_eigenvalue_of_gram_nonnegative(a):
    assert min_eigenvalue(a.T @ a) >= -1e-9 * max(1.0, np.abs(a).max() ** 2)


@pytest.mark.parametrize("m", range(1, 31))
def test_tridiagonal_suffix_closed_form(m):
    # (C^-1)_11 = m/(m+1) for the 2,-1 tridiagonal matrix
    assert tridiag_suffix_mse(m) == pytest.approx(1.0 / (m + 1), abs=1e-12)
    assert np.linalg.inv(tridiagonal_gram(m))[0, 0] == pytest.approx(m / (m + 1), rel=1e-12)


def test_second_moment_matrix_flags():
    good = SecondMomentMatrix(np.array([[2.0, 1.0], [1.0, 2.0]]), ["a", "b"])
    assert good.is_symmetric() and good.is_psd()
    bad = SecondMomentMatrix(np.array([[1.0, 2.0], [2.0, 1.0]]), ["a", "b"])
    assert not bad.is_psd()
