"""
Hard Dice metrics on label volumes.

Dice = 2 * TP / (2 * TP + FP + FN). A class absent from both prediction and
truth scores 1.0 by default; pass ``empty="exclude"`` to the aggregate helpers
to drop such classes from the mean instead.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgumentError
from .volumes import ConfusionCounts, LabelGrid, all_confusion_counts

POOR_THRESHOLD = 0.8


def dice_score(counts: ConfusionCounts) -> float:
    denom = 2 * counts.tp + counts.fp + counts.fn
    if denom == 0:
        return 1.0
    return 2 * counts.tp / denom


def dice_loss(counts: ConfusionCounts) -> float:
    return 1.0 - dice_score(counts)


def dice_from_counts(counts: np.ndarray, empty: str = "one") -> np.ndarray:
    """Vectorised Dice over an (N, 3) tp/fp/fn array.

    With ``empty="nan"`` both-empty classes come back as NaN so callers can
    exclude them.
    """
    counts = np.asarray(counts, dtype=np.int64)
    num = 2 * counts[:, 0]
    denom = num + counts[:, 1] + counts[:, 2]
    fill = {"one": 1.0, "nan": np.nan}[empty]
    out = np.full(len(counts), fill)
    nz = denom > 0
    out[nz] = num[nz] / denom[nz]
    return out


def per_class_dice(pred: LabelGrid, truth: LabelGrid) -> np.ndarray:
    """Dice for classes 1..N; entry ``i`` belongs to class ``i + 1``."""
    n = truth.num_classes
    counts = all_confusion_counts(pred.labels, truth.labels, max(n, pred.num_classes))[:n]
    return dice_from_counts(counts)


def mean_dice(scores: Sequence[float], empty: str = "one") -> float:
    """Mean over foreground classes.

    ``empty="exclude"`` skips NaN entries (both-empty classes scored with
    ``dice_from_counts(..., empty="nan")``).
    """
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise InvalidArgumentError("mean_dice needs at least one class")
    if empty == "exclude":
        scores = scores[~np.isnan(scores)]
        if scores.size == 0:
            return 1.0
    return float(np.mean(scores))


def poorly_performing(scores: Sequence[float], threshold: float = POOR_THRESHOLD) -> set[int]:
    """Class ids (1-based) whose Dice falls strictly below ``threshold``."""
    if not 0 < threshold <= 1:
        raise InvalidArgumentError(f"threshold must lie in (0, 1], got {threshold}")
    return {i + 1 for i, s in enumerate(scores) if s < threshold}


def pooled_dice(pairs: Iterable[tuple[np.ndarray, np.ndarray]], num_classes: int) -> np.ndarray:
    """Dice after summing confusion counts over several (pred, truth) volumes."""
    total = np.zeros((num_classes, 3), dtype=np.int64)
    for pred, truth in pairs:
        total += all_confusion_counts(pred, truth, num_classes)
    return dice_from_counts(total)
