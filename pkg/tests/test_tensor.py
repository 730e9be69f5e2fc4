import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from cycas.tensor import (
    DegenerateEmbeddingError,
    ShapeError,
    as_matrix,
    finite_difference_check,
    l2_normalize_backward,
    l2_normalize_columns,
    matmul,
    matmul_backward,
    row_softmax,
    row_softmax_backward,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def matrices(max_rows=6, max_cols=6):
    shapes = st.tuples(st.integers(1, max_rows), st.integers(1, max_cols))
    return shapes.flatmap(lambda s: arrays(np.float64, s, elements=finite))


def test_normalize_examples():
    np.testing.assert_allclose(l2_normalize_columns([[3.0], [4.0]]), [[0.6], [0.8]])
    np.testing.assert_array_equal(l2_normalize_columns([[1.0], [0.0]]), [[1.0], [0.0]])
    np.testing.assert_allclose(l2_normalize_columns(np.full((4, 1), 2.0)), np.full((4, 1), 0.5))


def test_normalize_rejects_zero_column():
    with pytest.raises(DegenerateEmbeddingError):
        l2_normalize_columns([[1.0, 0.0], [0.0, 0.0]])


@given(matrices())
def test_normalized_columns_have_unit_norm(M):
    if np.any(np.linalg.norm(M, axis=0) < 1e-6):
        return
    U = l2_normalize_columns(M)
    np.testing.assert_allclose(np.linalg.norm(U, axis=0), 1.0, atol=1e-9)
    assert np.all(np.isfinite(U))


def test_normalize_backward_kills_radial_component():
    x = np.array([[3.0], [4.0]])
    np.testing.assert_allclose(l2_normalize_backward(x, 2.5 * x), 0.0, atol=1e-15)
    u = np.array([[1.0], [0.0]])
    g = np.array([[0.0], [0.7]])
    np.testing.assert_allclose(l2_normalize_backward(u, g), g)


def test_normalize_backward_matches_fd(rng):
    X = rng.standard_normal((3, 2))
    R = rng.standard_normal((3, 2))
    err = finite_difference_check(lambda Y: np.sum(l2_normalize_columns(Y) * R), X,
                                  l2_normalize_backward(X, R))
    assert err < 1e-6


def test_normalize_backward_shape_mismatch():
    with pytest.raises(ShapeError):
        l2_normalize_backward(np.ones((3, 2)), np.ones((2, 3)))


def test_matmul_examples(rng):
    B = rng.standard_normal((3, 5))
    np.testing.assert_array_equal(matmul(np.eye(3), B), B)
    P = np.eye(4)[[2, 0, 3, 1]]
    np.testing.assert_array_equal(matmul(P, P.T), np.eye(4))
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_backward_matches_fd(rng):
    A = rng.standard_normal((4, 3))
    B = rng.standard_normal((3, 5))
    R = rng.standard_normal((4, 5))
    dA, dB = matmul_backward(A, B, R)
    assert dA.shape == A.shape and dB.shape == B.shape
    assert finite_difference_check(lambda Y: np.sum(matmul(Y, B) * R), A, dA) < 1e-6
    assert finite_difference_check(lambda Y: np.sum(matmul(A, Y) * R), B, dB) < 1e-6


def test_softmax_worked_values():
    np.testing.assert_array_equal(np.round(row_softmax([[1.0, 0.5]]), 2), [[0.62, 0.38]])
    np.testing.assert_array_equal(np.round(row_softmax([[1.0, 0.5, 0.5]]), 2), [[0.45, 0.27, 0.27]])


@given(st.integers(1, 9), st.floats(0.01, 100.0), finite)
def test_softmax_constant_row_is_uniform(K, T, c):
    np.testing.assert_allclose(row_softmax(np.full((1, K), c), T), 1.0 / K)


@given(matrices(), st.floats(0.01, 50.0))
def test_softmax_rows_are_distributions(M, T):
    P = row_softmax(M, T)
    assert np.all(P >= 0)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)


def test_softmax_rejects_nonpositive_temperature():
    with pytest.raises(ValueError):
        row_softmax([[1.0, 2.0]], 0.0)


def test_softmax_large_inputs_stay_finite():
    P = row_softmax([[1e4, -1e4, 0.0]], 50.0)
    assert np.all(np.isfinite(P))
    np.testing.assert_allclose(P, [[1.0, 0.0, 0.0]])


def test_softmax_backward_matches_fd(rng):
    M = rng.standard_normal((3, 4))
    R = rng.standard_normal((3, 4))
    T = 7.0
    an = row_softmax_backward(row_softmax(M, T), R, T)
    assert finite_difference_check(lambda Y: np.sum(row_softmax(Y, T) * R), M, an) < 1e-6


def test_fd_check_linear_function(rng):
    # round-off in f(X +- h) is about eps * |f| / h, so keep |f| small
    X = 1e-3 * rng.standard_normal((3, 4))
    assert finite_difference_check(np.sum, X, np.ones_like(X)) < 1e-10


def test_fd_check_flags_wrong_gradient(rng):
    X = rng.standard_normal((2, 2))
    assert finite_difference_check(np.sum, X, -np.ones_like(X)) > 1.0


def test_fd_check_non_finite_function():
    with pytest.raises(FloatingPointError):
        finite_difference_check(lambda Y: np.inf, np.ones((1, 1)), np.zeros((1, 1)))


def test_as_matrix_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        as_matrix([1.0, 2.0])
    with pytest.raises(ShapeError):
        as_matrix(np.ones((0, 3)))


def test_batched_ops_match_loop(rng):
    M = rng.standard_normal((3, 4, 5))
    P = row_softmax(M, 2.0)
    for b in range(3):
        np.testing.assert_allclose(P[b], row_softmax(M[b], 2.0))
    U = l2_normalize_columns(M)
    for b in range(3):
        np.testing.assert_allclose(U[b], l2_normalize_columns(M[b]))
