"""
Epoch-end re-weighting of per-class loss contributions.

Four strategies are available:

``uniform``
    every class weight stays at 1.
``tcf`` (threshold class freezing)
    a class whose score exceeds ``freeze_threshold`` gets ``freeze_weight``,
    otherwise 1. Re-evaluated from scratch every epoch.
``pcf`` (plateau class freezing)
    the best-scoring unfrozen class is frozen at ``freeze_weight`` once its
    score has plateaued (see :func:`plateau_check`).
``cbs`` (class boost strategy)
    same trigger as ``pcf``; on a trigger the plateaued class is frozen and
    every other unfrozen class ``k`` is set to
    ``min(1 / (S_k + stabilizer), weight_cap)``.

Scores are Dice *scores* (higher is better). Classes are addressed by their
0-based position in the score vector, i.e. position ``k`` is class id
``k + 1``. Epochs are numbered from 1; ``last_trigger`` is 0 until the first
trigger fires.

The state object is immutable and every step returns a fresh one, so a
schedule can be replayed or forked freely. It must be stepped sequentially.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .errors import InvalidArgumentError, InvariantViolation, NotReadyError, ShapeError


class Strategy(str, Enum):
    UNIFORM = "uniform"
    TCF = "tcf"
    PCF = "pcf"
    CBS = "cbs"


@dataclass(frozen=True)
class SchedulerConfig:
    strategy: Strategy = Strategy.UNIFORM
    freeze_threshold: float = 0.9
    freeze_weight: float = 0.1
    window: int = 5
    plateau_tol: float = 0.01
    stabilizer: float = 0.01
    weight_cap: float = 2.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "strategy", Strategy(self.strategy))
        except ValueError:
            raise InvalidArgumentError(f"unknown strategy {self.strategy!r}") from None
        if not 0 < self.freeze_threshold < 1:
            raise InvalidArgumentError("freeze_threshold must lie in (0, 1)")
        if not 0 < self.freeze_weight < 1:
            raise InvalidArgumentError("freeze_weight must lie in (0, 1)")
        if int(self.window) != self.window or self.window < 1:
            raise InvalidArgumentError("window must be a positive epoch count")
        if not self.plateau_tol > 0:
            raise InvalidArgumentError("plateau_tol must be positive")
        if not self.stabilizer > 0:
            raise InvalidArgumentError("stabilizer must be positive")
        if not self.weight_cap >= 1:
            raise InvalidArgumentError("weight_cap must be at least 1")


@dataclass(frozen=True)
class PlateauResult:
    """Outcome of one plateau test.

    ``class_index`` is ``None`` when every class is already frozen; in that
    case ``c`` is 0 and nothing triggers.
    """

    c: float
    triggered: bool
    class_index: int | None
    local_max: float | None = None
    global_max: float | None = None


@dataclass(frozen=True)
class ScheduleState:
    epoch: int
    history: tuple[tuple[float, ...], ...]
    weights: tuple[float, ...]
    frozen: tuple[bool, ...]
    last_trigger: int = 0
    last_check: PlateauResult | None = None

    @property
    def num_classes(self) -> int:
        return len(self.weights)

    def scores(self, k: int) -> list[float]:
        """Score history of class position ``k``, epoch 1 first."""
        return [row[k] for row in self.history]


def init_state(num_classes: int, config: SchedulerConfig | None = None) -> ScheduleState:
    if num_classes < 1:
        raise InvalidArgumentError("need at least one foreground class")
    return ScheduleState(
        epoch=0,
        history=(),
        weights=(1.0,) * num_classes,
        frozen=(False,) * num_classes,
    )


def _checked_scores(state: ScheduleState, scores: Sequence[float]) -> tuple[float, ...]:
    scores = tuple(map(float, scores))
    if len(scores) != state.num_classes:
        raise ShapeError(f"expected {state.num_classes} scores, got {len(scores)}")
    if not (0.0 <= min(scores) and max(scores) <= 1.0) or any(map(math.isnan, scores)):
        bad = next(v for v in scores if not 0.0 <= v <= 1.0)
        raise InvalidArgumentError(f"scores must lie in [0, 1], got {bad}")
    return scores


def tcf_weights(scores: Sequence[float], config: SchedulerConfig) -> tuple[float, ...]:
    tau, low = config.freeze_threshold, config.freeze_weight
    return tuple(low if s > tau else 1.0 for s in scores)


def plateau_check(state: ScheduleState, config: SchedulerConfig) -> PlateauResult:
    """Test whether the best unfrozen class has plateaued at epoch ``j``.

    The class is the argmax of the current scores over unfrozen classes (ties
    go to the lowest position). Its best score over epochs
    ``[max(j - window, u), j]`` is compared with its best over ``[u, j]``;
    the gap ``c`` triggers when it exceeds ``plateau_tol``.
    """
    if not state.history:
        raise NotReadyError("no epochs recorded yet")
    candidates = [k for k, f in enumerate(state.frozen) if not f]
    if not candidates:
        return PlateauResult(0.0, False, None)

    current = state.history[-1]
    best = candidates[0]
    for k in candidates[1:]:
        if current[k] > current[best]:
            best = k

    j, u = state.epoch, state.last_trigger
    # epoch t is stored at history[t - 1]; there is no stored epoch 0
    lo_global = max(u, 1)
    lo_local = max(j - config.window, u, 1)
    series = [row[best] for row in state.history[lo_global - 1 : j]]
    global_max = max(series)
    local_max = max(series[lo_local - lo_global :])
    c = abs(local_max - global_max)
    return PlateauResult(c, c > config.plateau_tol, best, local_max, global_max)


def _next(state, scores, weights, frozen, last_trigger, check):
    return ScheduleState(state.epoch + 1, state.history + (scores,), weights, frozen, last_trigger, check)


def uniform_step(state, scores, config):
    scores = _checked_scores(state, scores)
    weights = (1.0,) * state.num_classes
    return _next(state, scores, weights, state.frozen, state.last_trigger, None), weights


def tcf_step(state, scores, config):
    scores = _checked_scores(state, scores)
    weights = tcf_weights(scores, config)
    frozen = tuple(v > config.freeze_threshold for v in scores)
    return _next(state, scores, weights, frozen, state.last_trigger, None), weights


def _plateau(state, scores, config):
    """Advance by one epoch and run the plateau test on the result."""
    nxt = _next(state, scores, state.weights, state.frozen, state.last_trigger, None)
    check = plateau_check(nxt, config)
    object.__setattr__(nxt, "last_check", check)  # nxt is still private here
    return nxt, check


def pcf_step(state, scores, config):
    """Record one epoch of scores and apply the plateau freezing rule."""
    scores = _checked_scores(state, scores)
    nxt, check = _plateau(state, scores, config)
    if not check.triggered:
        return nxt, nxt.weights
    i = check.class_index
    weights = list(nxt.weights)
    frozen = list(nxt.frozen)
    weights[i] = config.freeze_weight
    frozen[i] = True
    weights = tuple(weights)
    return (
        _with(nxt, weights=weights, frozen=tuple(frozen), last_trigger=nxt.epoch, last_check=check),
        weights,
    )


def cbs_step(state, scores, config):
    """Record one epoch of scores and apply the class boost rule.

    Weights only move on trigger epochs: the plateaued class is frozen and
    each remaining unfrozen class is boosted according to its own score.
    """
    scores = _checked_scores(state, scores)
    nxt, check = _plateau(state, scores, config)
    if not check.triggered:
        return nxt, nxt.weights
    i = check.class_index
    frozen = list(nxt.frozen)
    frozen[i] = True
    # previously frozen classes keep the freeze weight they already carry
    weights = tuple(
        config.freeze_weight if f else min(1.0 / (v + config.stabilizer), config.weight_cap)
        for v, f in zip(scores, frozen)
    )
    return (
        _with(nxt, weights=weights, frozen=tuple(frozen), last_trigger=nxt.epoch, last_check=check),
        weights,
    )


_STEPS = {
    Strategy.UNIFORM: uniform_step,
    Strategy.TCF: tcf_step,
    Strategy.PCF: pcf_step,
    Strategy.CBS: cbs_step,
}


def step(state: ScheduleState, scores: Sequence[float], config: SchedulerConfig):
    """Advance one epoch. The returned weights apply to the *next* epoch."""
    return _STEPS[config.strategy](state, scores, config)


def check_transition(prev: ScheduleState, nxt: ScheduleState, config: SchedulerConfig) -> None:
    """Raise :class:`InvariantViolation` if one step broke a weight rule."""
    low, cap = config.freeze_weight, config.weight_cap
    problems = []
    if nxt.epoch != prev.epoch + 1:
        problems.append("epoch did not advance by one")
    if config.strategy in (Strategy.TCF, Strategy.PCF):
        if any(w not in (low, 1.0) for w in nxt.weights):
            problems.append(f"weights outside {{{low}, 1}}: {nxt.weights}")
    if config.strategy in (Strategy.PCF, Strategy.CBS):
        if any(a and not b for a, b in zip(prev.frozen, nxt.frozen)):
            problems.append("a frozen class was unfrozen")
        if sum(nxt.frozen) - sum(prev.frozen) > 1:
            problems.append("more than one class frozen in one epoch")
        floor = 1.0 / (1.0 + config.stabilizer)
        for w, f in zip(nxt.weights, nxt.frozen):
            if f and w != low:
                problems.append(f"frozen class carries weight {w}")
            elif not f and config.strategy is Strategy.CBS and not floor <= w <= cap:
                problems.append(f"boost weight {w} outside [{floor}, {cap}]")
    if config.strategy is Strategy.UNIFORM and any(w != 1.0 for w in nxt.weights):
        problems.append("uniform weights changed")
    if nxt.last_check is not None and not nxt.last_check.c >= 0:
        problems.append(f"negative plateau gap {nxt.last_check.c}")
    if problems:
        raise InvariantViolation(f"epoch {nxt.epoch}: " + "; ".join(problems))


def _with(state: ScheduleState, **changes) -> ScheduleState:
    fields = {
        "epoch": state.epoch,
        "history": state.history,
        "weights": state.weights,
        "frozen": state.frozen,
        "last_trigger": state.last_trigger,
        "last_check": state.last_check,
    }
    fields.update(changes)
    return ScheduleState(**fields)


class LossScheduler:
    """Stateful convenience wrapper around :func:`step` for training loops."""

    def __init__(self, num_classes: int, config: SchedulerConfig | None = None):
        self.config = config or SchedulerConfig()
        self.state = init_state(num_classes, self.config)

    @property
    def weights(self) -> tuple[float, ...]:
        return self.state.weights

    def step(self, scores: Sequence[float]) -> tuple[float, ...]:
        self.state, weights = step(self.state, scores, self.config)
        return weights
