import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from nestseg.grid import invert, masked_product_sum, to_semantic

binary = arrays(np.uint8, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=st.integers(0, 1))


def test_to_semantic_background_only():
    assert not to_semantic(np.zeros((4, 4), int)).any()


def test_to_semantic_counts_instance_pixels():
    m = np.zeros((5, 5), int)
    m.flat[:6] = 3
    m.flat[10:14] = 7
    sem = to_semantic(m)
    assert sem.sum() == 10
    assert set(np.unique(sem)) == {0, 1}


def test_to_semantic_saturates():
    assert to_semantic(np.full((3, 4), 9)).all()


def test_to_semantic_rejects_negative_ids():
    with pytest.raises(ValueError):
        to_semantic(np.array([[0, -1]]))


@given(arrays(np.int64, (6, 6), elements=st.integers(0, 5)), st.permutations(range(1, 6)))
def test_to_semantic_ignores_relabelling(mask, perm):
    lut = np.array([0, *perm])
    np.testing.assert_array_equal(to_semantic(mask), to_semantic(lut[mask]))


def test_invert_examples():
    np.testing.assert_array_equal(invert(np.ones((2, 2), np.uint8)), np.zeros((2, 2)))
    np.testing.assert_array_equal(invert(np.zeros((2, 2), np.uint8)), np.ones((2, 2)))
    checker = np.array([[1, 0], [0, 1]], np.uint8)
    np.testing.assert_array_equal(invert(checker), [[0, 1], [1, 0]])


@given(binary)
def test_invert_is_involution(m):
    np.testing.assert_array_equal(invert(invert(m)), m)


def test_masked_product_sum_examples():
    a = np.zeros((3, 3), np.uint8)
    b = np.zeros((3, 3), np.uint8)
    a[0, :] = 1
    b[1, :] = 1
    assert masked_product_sum(a, b) == 0
    assert masked_product_sum(a, a) == 3
    # a: top row, c: left column plus (0,1) -> shared pixels (0,0) and (0,1)
    c = np.zeros((3, 3), np.uint8)
    c[:, 0] = 1
    c[0, 1] = 1
    assert masked_product_sum(a, c) == 2


def test_masked_product_sum_shape_mismatch():
    with pytest.raises(ValueError, match="incompatible"):
        masked_product_sum(np.zeros((2, 2)), np.zeros((3, 2)))


@given(st.data())
def test_masked_product_sum_symmetric_and_bounded(data):
    a = data.draw(binary)
    b = data.draw(arrays(np.uint8, a.shape, elements=st.integers(0, 1)))
    s = masked_product_sum(a, b)
    assert s == masked_product_sum(b, a)
    assert s <= min(a.sum(), b.sum())
