import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gbnn import tensor as T
from gbnn.errors import DimensionError, NumericError


def test_matmul_identity():
    b = np.array([[3.0, 4.0], [5.0, 6.0]])
    np.testing.assert_array_equal(T.matmul(np.eye(2), b), b)


def test_matmul_hand_computed():
    # [[1,2],[3,4]] x [[0],[1]] = [[2],[4]] by hand
    np.testing.assert_array_equal(T.matmul([[1, 2], [3, 4]], [[0], [1]]), [[2.0], [4.0]])


def test_matmul_zero_annihilates(rng):
    a = rng.normal(size=(4, 3))
    assert not T.matmul(a, np.zeros((3, 5))).any()


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        T.matmul(np.ones((2, 3)), np.ones((2, 2)))


def test_matmul_associative(rng):
    for _ in range(20):
        a, b, c = rng.normal(size=(3, 4)), rng.normal(size=(4, 5)), rng.normal(size=(5, 2))
        left = T.matmul(T.matmul(a, b), c)
        right = T.matmul(a, T.matmul(b, c))
        assert np.max(np.abs(left - right)) <= 1e-9 * np.max(np.abs(left))


def test_softmax_uniform_row():
    np.testing.assert_allclose(T.softmax_rows(np.zeros((1, 3))), [[1 / 3] * 3], atol=1e-15)


def test_softmax_two_class_value():
    e = np.e
    np.testing.assert_allclose(T.softmax_rows([[1.0, 0.0]]), [[e / (e + 1), 1 / (e + 1)]],
                               rtol=1e-14)
    np.testing.assert_allclose(T.softmax_rows([[1.0, 0.0]]), [[0.7311, 0.2689]], atol=1e-4)


def test_softmax_nan_raises():
    with pytest.raises(NumericError):
        T.softmax_rows([[0.0, np.nan]])


rows = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 8)),
              elements=st.floats(-50, 50))


@settings(max_examples=200, deadline=None)
@given(rows)
def test_softmax_rows_sum_to_one(f):
    p = T.softmax_rows(f)
    assert (p >= 0).all()
    assert np.max(np.abs(p.sum(axis=1) - 1.0)) < 1e-12


@settings(max_examples=200, deadline=None)
@given(rows, st.floats(-100, 100))
def test_softmax_shift_invariance(f, c):
    shift = c * np.linspace(-1, 1, f.shape[0])[:, None]
    assert np.max(np.abs(T.softmax_rows(f + shift) - T.softmax_rows(f))) < 1e-12


def test_elementwise_suite(rng):
    x = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(T.scale(x, 1), x)
    assert not T.add(x, T.neg(x)).any()
    np.testing.assert_array_equal(T.hadamard(x, np.ones_like(x)), x)
    np.testing.assert_array_equal(T.sub(x, x), np.zeros_like(x))
    np.testing.assert_array_equal(T.reduce_mean([[1, 3], [5, 7]], axis=0), [3.0, 5.0])
    np.testing.assert_array_equal(T.reduce_sum([[1, 3], [5, 7]], axis=1), [4.0, 12.0])
    np.testing.assert_array_equal(T.add(x, 2.0), x + 2.0)


def test_no_silent_broadcasting():
    with pytest.raises(DimensionError):
        T.add(np.ones((3, 4)), np.ones(4))
    with pytest.raises(DimensionError):
        T.hadamard(np.ones((2, 1)), np.ones((2, 3)))
    with pytest.raises(DimensionError):
        T.reduce_sum(np.ones((2, 2)), axis=2)


def test_as_tensor_rejects_empty_dims():
    with pytest.raises(DimensionError):
        T.as_tensor(np.ones((0, 3)))
    assert T.as_tensor(3).shape == (1,)
