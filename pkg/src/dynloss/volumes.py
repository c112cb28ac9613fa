"""
3D volume containers and voxel counting.

Volumes are stored flat in x-fastest order (the NIfTI-1 on-disk order), so
voxel (x, y, z) lives at index ``x + nx * (y + ny * z)``. ``as_array`` gives a
``(nx, ny, nz)`` view for code that wants real axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyForegroundError, InvalidArgumentError, ShapeError

Dims = tuple[int, int, int]


def _check_dims(dims) -> Dims:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise ShapeError(f"dims must be three positive voxel counts, got {dims}")
    return dims


def flat_to_array(flat: np.ndarray, dims: Dims) -> np.ndarray:
    return np.asarray(flat).reshape(dims, order="F")


def array_to_flat(arr: np.ndarray) -> np.ndarray:
    return np.asarray(arr).reshape(-1, order="F")


@dataclass(frozen=True)
class VoxelGrid:
    """Scalar intensity volume with physical voxel spacing in millimetres."""

    dims: Dims
    values: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        dims = _check_dims(self.dims)
        values = np.asarray(self.values).reshape(-1)
        if values.size != dims[0] * dims[1] * dims[2]:
            raise ShapeError(f"{values.size} values do not fill dims {dims}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(s > 0 for s in spacing):
            raise InvalidArgumentError(f"spacing must be strictly positive, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", spacing)

    @classmethod
    def from_array(cls, arr: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> VoxelGrid:
        arr = np.asarray(arr)
        return cls(arr.shape, array_to_flat(arr), spacing)

    def as_array(self) -> np.ndarray:
        return flat_to_array(self.values, self.dims)

    @property
    def size(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class LabelGrid:
    """Per-voxel class ids. 0 is background, 1..num_classes are foreground."""

    dims: Dims
    labels: np.ndarray
    num_classes: int
    spacing: tuple[float, float, float] = field(default=(1.0, 1.0, 1.0))

    def __post_init__(self):
        dims = _check_dims(self.dims)
        labels = np.asarray(self.labels).reshape(-1)
        if labels.size != dims[0] * dims[1] * dims[2]:
            raise ShapeError(f"{labels.size} labels do not fill dims {dims}")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise InvalidArgumentError("label ids must be integers")
        labels = labels.astype(np.int64, copy=False)
        n = int(self.num_classes)
        if n < 0:
            raise InvalidArgumentError("num_classes must be non-negative")
        if labels.size and (labels.min() < 0 or labels.max() > n):
            raise InvalidArgumentError(f"label ids must lie in 0..{n}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "num_classes", n)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @classmethod
    def from_array(cls, arr: np.ndarray, num_classes: int | None = None) -> LabelGrid:
        arr = np.asarray(arr)
        if num_classes is None:
            num_classes = int(arr.max()) if arr.size else 0
        return cls(arr.shape, array_to_flat(arr), num_classes)

    def as_array(self) -> np.ndarray:
        return flat_to_array(self.labels, self.dims)

    @property
    def size(self) -> int:
        return self.labels.size


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "fn"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise InvalidArgumentError(f"{name} must be a non-negative integer, got {v}")
            object.__setattr__(self, name, int(v))

    def __add__(self, other: ConfusionCounts) -> ConfusionCounts:
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def one_hot_mask(labels: LabelGrid, c: int) -> np.ndarray:
    """Flat 0/1 indicator of voxels carrying class ``c``."""
    if not 0 <= c <= labels.num_classes:
        raise InvalidArgumentError(f"class id {c} outside 0..{labels.num_classes}")
    return (labels.labels == c).astype(np.uint8)


def confusion_counts(pred: LabelGrid, truth: LabelGrid, c: int) -> ConfusionCounts:
    if pred.dims != truth.dims:
        raise ShapeError(f"prediction dims {pred.dims} != truth dims {truth.dims}")
    if not 1 <= c <= max(truth.num_classes, pred.num_classes):
        raise InvalidArgumentError(f"class id {c} is not a foreground class")
    p = pred.labels == c
    t = truth.labels == c
    tp = int(np.count_nonzero(p & t))
    return ConfusionCounts(tp, int(np.count_nonzero(p)) - tp, int(np.count_nonzero(t)) - tp)


def all_confusion_counts(pred: np.ndarray, truth: np.ndarray, num_classes: int) -> np.ndarray:
    """(N, 3) array of tp, fp, fn for classes 1..N over flat label arrays.

    Vectorised counterpart of :func:`confusion_counts` used in training loops.
    """
    pred = np.asarray(pred).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    k = num_classes + 1
    pred_counts = np.bincount(pred, minlength=k)[1:k]
    truth_counts = np.bincount(truth, minlength=k)[1:k]
    hit = pred[pred == truth]
    tp = np.bincount(hit, minlength=k)[1:k]
    return np.stack([tp, pred_counts - tp, truth_counts - tp], axis=1).astype(np.int64)


def class_prevalence(truth: LabelGrid) -> np.ndarray:
    """Fraction of labelled (non-background) voxels in each class 1..N.

    Entry ``i`` of the result belongs to class ``i + 1``.
    """
    counts = np.bincount(truth.labels, minlength=truth.num_classes + 1)[1:]
    total = counts.sum()
    if total == 0:
        raise EmptyForegroundError("volume has no foreground voxels")
    return counts / total
