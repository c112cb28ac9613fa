import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dynloss.errors import EmptyForegroundError, InvalidArgumentError, ShapeError
from dynloss.volumes import (
    ConfusionCounts,
    LabelGrid,
    VoxelGrid,
    all_confusion_counts,
    class_prevalence,
    confusion_counts,
    one_hot_mask,
)


def grid(arr, n=None):
    return LabelGrid.from_array(np.asarray(arr), n)


def test_flat_layout_is_x_fastest():
    arr = np.arange(24).reshape(2, 3, 4)
    g = VoxelGrid.from_array(arr)
    x, y, z = 1, 2, 3
    assert g.values[x + 2 * (y + 3 * z)] == arr[x, y, z]
    np.testing.assert_array_equal(g.as_array(), arr)


def test_voxelgrid_rejects_wrong_size_and_spacing():
    with pytest.raises(ShapeError):
        VoxelGrid((2, 2, 2), np.zeros(7))
    with pytest.raises(ShapeError):
        VoxelGrid((2, 0, 2), np.zeros(0))
    with pytest.raises(InvalidArgumentError):
        VoxelGrid((1, 1, 1), np.zeros(1), spacing=(1.0, 0.0, 1.0))


def test_labelgrid_range_checked():
    with pytest.raises(InvalidArgumentError):
        LabelGrid((2, 1, 1), np.array([0, 3]), 2)
    with pytest.raises(InvalidArgumentError):
        LabelGrid((2, 1, 1), np.array([0, -1]), 2)
    with pytest.raises(InvalidArgumentError):
        LabelGrid((2, 1, 1), np.array([0.5, 1.0]), 2)
    g = LabelGrid((2, 1, 1), np.array([0.0, 2.0]), 2)
    assert g.labels.dtype == np.int64


def test_one_hot_mask():
    g = grid([[[0, 1], [2, 1]]], 2)
    np.testing.assert_array_equal(one_hot_mask(g, 1), (g.labels == 1).astype(np.uint8))
    assert one_hot_mask(g, 1).dtype == np.uint8
    with pytest.raises(InvalidArgumentError):
        one_hot_mask(g, 3)


def test_confusion_counts_small_example():
    pred = grid([[[1, 1, 0, 2]]], 2)
    truth = grid([[[1, 0, 1, 2]]], 2)
    assert confusion_counts(pred, truth, 1) == ConfusionCounts(1, 1, 1)
    assert confusion_counts(pred, truth, 2) == ConfusionCounts(1, 0, 0)


def test_confusion_counts_errors():
    a = grid(np.zeros((2, 2, 2), int), 2)
    b = grid(np.zeros((2, 2, 1), int), 2)
    with pytest.raises(ShapeError):
        confusion_counts(a, b, 1)
    with pytest.raises(InvalidArgumentError):
        confusion_counts(a, a, 0)


def test_counts_addition_and_validation():
    assert ConfusionCounts(1, 2, 3) + ConfusionCounts(4, 5, 6) == ConfusionCounts(5, 7, 9)
    with pytest.raises(InvalidArgumentError):
        ConfusionCounts(-1, 0, 0)


labels = arrays(np.int64, st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4)), elements=st.integers(0, 3))


@settings(max_examples=60, deadline=None)
@given(labels, st.data())
def test_count_identities(truth_arr, data):
    pred_arr = data.draw(arrays(np.int64, truth_arr.shape, elements=st.integers(0, 3)))
    pred, truth = grid(pred_arr, 3), grid(truth_arr, 3)
    table = all_confusion_counts(pred.labels, truth.labels, 3)
    for c in range(1, 4):
        k = confusion_counts(pred, truth, c)
        assert k.tp + k.fn == int((truth_arr == c).sum())
        assert k.tp + k.fp == int((pred_arr == c).sum())
        assert (k.tp, k.fp, k.fn) == tuple(table[c - 1])
        # symmetry: swapping roles swaps fp and fn
        r = confusion_counts(truth, pred, c)
        assert (r.tp, r.fp, r.fn) == (k.tp, k.fn, k.fp)


def test_class_prevalence():
    g = grid([[[0, 1, 1, 2, 0, 1]]], 3)
    np.testing.assert_allclose(class_prevalence(g), [0.75, 0.25, 0.0])
    with pytest.raises(EmptyForegroundError):
        class_prevalence(grid(np.zeros((2, 2, 2), int), 2))
