"""
Weighted soft Dice loss and its analytic gradient.

Probabilities are held channel-major as a ``(C, V)`` array with ``C = N + 1``
channels (channel 0 is background) over ``V`` voxels. For channel ``c``::

    I = sum_v p[c, v] * g[c, v]      P = sum_v p[c, v]      G = sum_v g[c, v]
    loss_c = 1 - (2 I + s) / (P + G + s)

where ``g`` is the one-hot truth and ``s`` a smoothing constant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError, ShapeError
from .volumes import Dims, LabelGrid

DEFAULT_SMOOTHING = 1e-5


@dataclass(frozen=True)
class ProbField:
    dims: Dims
    probs: np.ndarray  # (C, V)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        v = int(np.prod(self.dims))
        if probs.ndim != 2 or probs.shape[1] != v:
            raise ShapeError(f"probs shape {probs.shape} does not match {v} voxels")
        object.__setattr__(self, "probs", probs)

    @property
    def num_channels(self) -> int:
        return self.probs.shape[0]

    def is_valid(self, atol: float = 1e-6) -> bool:
        p = self.probs
        return bool(
            np.all(p >= -atol) and np.all(p <= 1 + atol) and np.allclose(p.sum(axis=0), 1.0, atol=atol)
        )

    @classmethod
    def one_hot(cls, labels: LabelGrid) -> ProbField:
        return cls(labels.dims, one_hot(labels.labels, labels.num_classes + 1))


@dataclass(frozen=True)
class WeightedLossReport:
    per_class_loss: np.ndarray
    weights_applied: np.ndarray
    total: float


def one_hot(labels: np.ndarray, num_channels: int) -> np.ndarray:
    labels = np.asarray(labels).reshape(-1)
    g = np.zeros((num_channels, labels.size))
    g[labels, np.arange(labels.size)] = 1.0
    return g


def _unpack(probs, truth) -> tuple[np.ndarray, np.ndarray]:
    p = probs.probs if isinstance(probs, ProbField) else np.asarray(probs, dtype=float)
    labels = truth.labels if isinstance(truth, LabelGrid) else np.asarray(truth).reshape(-1)
    if p.ndim != 2 or p.shape[1] != labels.size:
        raise ShapeError(f"probs shape {p.shape} does not match {labels.size} truth voxels")
    if labels.size and labels.max() >= p.shape[0]:
        raise ShapeError(f"truth has class ids beyond the {p.shape[0]} probability channels")
    return p, one_hot(labels, p.shape[0])


def _check_smoothing(s: float) -> None:
    if s < 0:
        raise InvalidArgumentError(f"smoothing must be non-negative, got {s}")


def soft_dice_per_class(probs, truth, s: float = DEFAULT_SMOOTHING) -> np.ndarray:
    """Soft Dice loss of every channel, background included, shape ``(C,)``.

    ``truth`` may be a LabelGrid or a flat label array.
    """
    _check_smoothing(s)
    p, g = _unpack(probs, truth)
    inter = (p * g).sum(axis=1)
    denom = p.sum(axis=1) + g.sum(axis=1) + s
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = (2 * inter + s) / denom
    # s == 0 and a channel empty in both: treat as a perfect match
    ratio = np.where(denom == 0, 1.0, ratio)
    return 1.0 - ratio


def soft_dice_grad(probs, truth, s: float = DEFAULT_SMOOTHING) -> np.ndarray:
    """d loss_c / d p[c, v] for every channel and voxel, shape ``(C, V)``.

    Each channel's loss depends only on its own probabilities, so the full
    Jacobian is this diagonal block.
    """
    _check_smoothing(s)
    p, g = _unpack(probs, truth)
    inter = (p * g).sum(axis=1, keepdims=True)
    denom = p.sum(axis=1, keepdims=True) + g.sum(axis=1, keepdims=True) + s
    safe = np.where(denom == 0, 1.0, denom)
    grad = -(2 * g * safe - (2 * inter + s)) / safe**2
    return np.where(denom == 0, 0.0, grad)


def loss_mask(num_channels: int, include_background: bool) -> np.ndarray:
    mask = np.ones(num_channels, dtype=bool)
    mask[0] = include_background
    return mask


def weighted_total(
    per_class_loss: Sequence[float],
    weights: Sequence[float],
    include_background: bool = False,
) -> float:
    """``(1/|F|) * sum_{c in F} w_c * loss_c`` with a fixed class count ``|F|``.

    Both sequences are channel-indexed (position 0 is background). ``F`` is
    channels 1..N, plus channel 0 when ``include_background`` is set.
    """
    losses = np.asarray(per_class_loss, dtype=float)
    w = np.asarray(weights, dtype=float)
    if losses.shape != w.shape or losses.ndim != 1:
        raise ShapeError(f"loss shape {losses.shape} != weight shape {w.shape}")
    mask = loss_mask(losses.size, include_background)
    if not mask.any():
        raise InvalidArgumentError("no classes selected for the loss")
    return float(np.sum(w[mask] * losses[mask]) / mask.sum())


def channel_weights(class_weights: Sequence[float], background_weight: float = 1.0) -> np.ndarray:
    """Prepend the background channel to a foreground weight vector."""
    return np.concatenate([[background_weight], np.asarray(class_weights, dtype=float)])


def weighted_soft_dice(
    probs, truth, weights, s: float = DEFAULT_SMOOTHING, include_background: bool = False
) -> WeightedLossReport:
    losses = soft_dice_per_class(probs, truth, s)
    w = np.asarray(weights, dtype=float)
    return WeightedLossReport(losses, w, weighted_total(losses, w, include_background))


def weighted_soft_dice_grad(
    probs, truth, weights, s: float = DEFAULT_SMOOTHING, include_background: bool = False
) -> np.ndarray:
    """Gradient of :func:`weighted_total` of the soft Dice losses w.r.t. ``probs``."""
    grad = soft_dice_grad(probs, truth, s)
    w = np.asarray(weights, dtype=float)
    mask = loss_mask(grad.shape[0], include_background)
    scale = np.where(mask, w, 0.0) / mask.sum()
    return grad * scale[:, None]


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_err: float
    tol: float
    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Largest entrywise ``|a - n| / max(|a|, |n|, floor * max|a|)``.

    The floor keeps entries that are numerically zero from dominating; when
    the whole gradient is zero an absolute error is returned.
    """
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0:
        return float(np.abs(a - n).max(initial=0.0))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor * scale)
    return float((np.abs(a - n) / denom).max())


def finite_diff_check(
    probs,
    truth,
    s: float = DEFAULT_SMOOTHING,
    h: float = 1e-6,
    tol: float = 1e-6,
    grad_fn=soft_dice_grad,
) -> GradCheckReport:
    """Compare ``grad_fn`` with central differences of :func:`soft_dice_per_class`.

    Every entry ``p[c, v]`` is perturbed independently (off the simplex), which
    is what the per-channel loss is a function of.
    """
    p = np.array(probs.probs if isinstance(probs, ProbField) else probs, dtype=float)
    analytic = np.asarray(grad_fn(p, truth, s), dtype=float)
    numeric = np.zeros_like(p)
    for c in range(p.shape[0]):
        for v in range(p.shape[1]):
            old = p[c, v]
            p[c, v] = old + h
            up = soft_dice_per_class(p, truth, s)[c]
            p[c, v] = old - h
            down = soft_dice_per_class(p, truth, s)[c]
            p[c, v] = old
            numeric[c, v] = (up - down) / (2 * h)
    err = relative_error(analytic, numeric)
    return GradCheckReport(err, tol, analytic, numeric)
