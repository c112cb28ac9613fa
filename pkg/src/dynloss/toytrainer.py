"""
Voxelwise MLP segmenter trained with the weighted soft Dice loss.

The model maps a handful of per-voxel features to class probabilities
through one ReLU hidden layer and a softmax. Gradients are written out by
hand and checked against finite differences in the test-suite. Training is
plain SGD with momentum over shuffled voxel mini-batches; after every epoch
the held-out Dice scores feed the loss scheduler, whose weights are used for
the following epoch.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import scheduler as sched
from .errors import InvalidArgumentError, ShapeError
from .loss import (
    DEFAULT_SMOOTHING,
    channel_weights,
    relative_error,
    soft_dice_per_class,
    weighted_soft_dice_grad,
    weighted_total,
)
from .metrics import pooled_dice
from .volumes import LabelGrid, VoxelGrid

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


# --------------------------------------------------------------------------
# features
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureSpec:
    intensity: bool = True
    coords: bool = True
    local_mean: bool = True
    grad_mag: bool = True

    @property
    def num_features(self) -> int:
        return int(self.intensity) + 3 * int(self.coords) + int(self.local_mean) + int(self.grad_mag)

    def __post_init__(self):
        if self.num_features < 1:
            raise InvalidArgumentError("at least one feature must be enabled")


def _box_mean3(a: np.ndarray) -> np.ndarray:
    p = np.pad(a, 1, mode="edge")
    out = np.zeros_like(a, dtype=float)
    nx, ny, nz = a.shape
    for dx in range(3):
        for dy in range(3):
            for dz in range(3):
                out += p[dx : dx + nx, dy : dy + ny, dz : dz + nz]
    return out / 27.0


def _grad_magnitude(a: np.ndarray) -> np.ndarray:
    p = np.pad(a.astype(float), 1, mode="edge")
    gx = (p[2:, 1:-1, 1:-1] - p[:-2, 1:-1, 1:-1]) / 2
    gy = (p[1:-1, 2:, 1:-1] - p[1:-1, :-2, 1:-1]) / 2
    gz = (p[1:-1, 1:-1, 2:] - p[1:-1, 1:-1, :-2]) / 2
    return np.sqrt(gx**2 + gy**2 + gz**2)


def extract_features(volume: VoxelGrid, spec: FeatureSpec | None = None) -> np.ndarray:
    """Per-voxel feature matrix of shape (V, F), rows in flat voxel order.

    Column order: intensity, x, y, z (scaled to [0, 1]), 3x3x3 mean, central
    difference gradient magnitude. Neighbourhoods clamp at the volume edge.
    """
    spec = spec or FeatureSpec()
    if (spec.local_mean or spec.grad_mag) and min(volume.dims) < 3:
        raise ShapeError(f"volume {volume.dims} too small for 3x3x3 neighbourhood features")
    arr = volume.as_array().astype(float)
    cols = []
    if spec.intensity:
        cols.append(arr)
    if spec.coords:
        grids = np.meshgrid(*[np.arange(n, dtype=float) / max(n - 1, 1) for n in volume.dims], indexing="ij")
        cols.extend(grids)
    if spec.local_mean:
        cols.append(_box_mean3(arr))
    if spec.grad_mag:
        cols.append(_grad_magnitude(arr))
    return np.stack([c.reshape(-1, order="F") for c in cols], axis=1)


# --------------------------------------------------------------------------
# model
# --------------------------------------------------------------------------


@dataclass
class MlpParams:
    w1: np.ndarray  # (H, F)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (C, H)
    b2: np.ndarray  # (C,)

    NAMES = ("w1", "b1", "w2", "b2")

    @classmethod
    def init(
        cls,
        num_features: int,
        hidden: int,
        num_channels: int,
        rng: np.random.Generator,
        bounds: tuple[np.ndarray, np.ndarray] | None = None,
        out_scale: float = 0.1,
    ) -> MlpParams:
        """He-scaled random weights.

        Each hidden unit's hyperplane passes through a point drawn uniformly
        from the feature box ``bounds`` (default ``[-1, 1]^F``), so the ReLU
        kinks cover the whole data range including its sparse tails. The
        output layer starts small so every class begins near probability 1/C.
        """
        w1 = rng.standard_normal((hidden, num_features)) * np.sqrt(2.0 / num_features)
        lo, hi = bounds if bounds is not None else (-np.ones(num_features), np.ones(num_features))
        anchors = rng.uniform(lo, hi, size=(hidden, num_features))
        return cls(
            w1=w1,
            b1=-(w1 * anchors).sum(axis=1),
            w2=rng.standard_normal((num_channels, hidden)) * np.sqrt(1.0 / hidden) * out_scale,
            b2=np.zeros(num_channels),
        )

    @classmethod
    def zeros_like(cls, other: MlpParams) -> MlpParams:
        return cls(*(np.zeros_like(getattr(other, n)) for n in cls.NAMES))

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in self.NAMES]

    def copy(self) -> MlpParams:
        return MlpParams(*(a.copy() for a in self.arrays()))

    @property
    def num_channels(self) -> int:
        return self.w2.shape[0]


def _check_features(params: MlpParams, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[1] != params.w1.shape[1]:
        raise ShapeError(f"features {x.shape} do not match W1 {params.w1.shape}")
    return x


def logits(params: MlpParams, features: np.ndarray) -> np.ndarray:
    x = _check_features(params, features)
    return np.maximum(x @ params.w1.T + params.b1, 0.0) @ params.w2.T + params.b2


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(params: MlpParams, features: np.ndarray) -> np.ndarray:
    """Class probabilities, channel-major (C, V)."""
    return _softmax(logits(params, features)).T


def backward(
    params: MlpParams,
    features: np.ndarray,
    truth: np.ndarray,
    weights: Sequence[float],
    s: float = DEFAULT_SMOOTHING,
    include_background: bool = False,
) -> MlpParams:
    """Gradient of the weighted soft Dice total w.r.t. every parameter.

    ``weights`` are the N foreground class weights; the background channel
    gets weight 1 when it is included in the loss.
    """
    x = _check_features(params, features)
    truth = np.asarray(truth).reshape(-1)
    if truth.size != x.shape[0]:
        raise ShapeError(f"{truth.size} labels for {x.shape[0]} feature rows")
    w = channel_weights(weights)
    if w.size != params.num_channels:
        raise ShapeError(f"{w.size - 1} class weights for {params.num_channels} channels")

    z1 = x @ params.w1.T + params.b1
    a1 = np.maximum(z1, 0.0)
    p = _softmax(a1 @ params.w2.T + params.b2)  # (V, C)

    dp = weighted_soft_dice_grad(p.T, truth, w, s, include_background).T
    dz2 = p * (dp - (p * dp).sum(axis=1, keepdims=True))
    da1 = dz2 @ params.w2
    dz1 = da1 * (z1 > 0)
    return MlpParams(w1=dz1.T @ x, b1=dz1.sum(axis=0), w2=dz2.T @ a1, b2=dz2.sum(axis=0))


def batch_loss(
    params: MlpParams,
    features: np.ndarray,
    truth: np.ndarray,
    weights: Sequence[float],
    s: float = DEFAULT_SMOOTHING,
    include_background: bool = False,
) -> float:
    probs = forward(params, features)
    losses = soft_dice_per_class(probs, truth, s)
    return weighted_total(losses, channel_weights(weights), include_background)


def param_grad_check(
    params: MlpParams,
    features: np.ndarray,
    truth: np.ndarray,
    weights: Sequence[float],
    s: float = DEFAULT_SMOOTHING,
    include_background: bool = False,
    h: float = 1e-5,
) -> float:
    """Largest relative error between :func:`backward` and central
    differences of :func:`batch_loss`, taken over every parameter entry.

    The loss has ReLU kinks, so the comparison is only meaningful when
    :func:`kink_margin` is well above ``h``.
    """
    analytic = backward(params, features, truth, weights, s, include_background)
    probe = params.copy()
    worst = 0.0
    for name in MlpParams.NAMES:
        arr = getattr(probe, name)
        numeric = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = batch_loss(probe, features, truth, weights, s, include_background)
            arr[idx] = old - h
            down = batch_loss(probe, features, truth, weights, s, include_background)
            arr[idx] = old
            numeric[idx] = (up - down) / (2 * h)
        worst = max(worst, relative_error(getattr(analytic, name), numeric))
    return worst


def kink_margin(params: MlpParams, features: np.ndarray) -> float:
    """Smallest distance of any hidden pre-activation from the ReLU kink."""
    x = _check_features(params, features)
    return float(np.abs(x @ params.w1.T + params.b1).min())


def predict(params: MlpParams, features: np.ndarray) -> np.ndarray:
    """Hard labels by per-voxel argmax; ties go to the lowest class id."""
    return np.argmax(logits(params, features), axis=1)


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 40
    batch_size: int = 4096
    voxels_per_epoch: int | None = 65536
    seed: int = 0
    validation_fraction: float = 0.2
    hidden: int = 32
    init_out_scale: float = 0.1
    smoothing: float = DEFAULT_SMOOTHING
    # the background channel takes part in the loss; without it the
    # largest organ tends to absorb the background voxels
    include_background: bool = True
    scheduler: sched.SchedulerConfig = field(default_factory=sched.SchedulerConfig)
    # coordinates are off: with a within-volume voxel split they let the
    # model memorise blob positions instead of learning intensities
    features: FeatureSpec = field(default_factory=lambda: FeatureSpec(coords=False))

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise InvalidArgumentError("learning_rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise InvalidArgumentError("momentum must lie in [0, 1)")
        if self.epochs < 1:
            raise InvalidArgumentError("epochs must be at least 1")
        if not 0 < self.validation_fraction < 1:
            raise InvalidArgumentError("validation_fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.hidden < 1:
            raise InvalidArgumentError("batch_size and hidden must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scheduler"]["strategy"] = self.scheduler.strategy.value
        return d


@dataclass
class TrainData:
    """Standardised training voxels plus per-volume validation voxel sets."""

    x: np.ndarray
    y: np.ndarray
    val: list[tuple[np.ndarray, np.ndarray]]
    num_classes: int
    mean: np.ndarray
    std: np.ndarray


def prepare_data(
    volumes: Sequence[tuple[VoxelGrid, LabelGrid]],
    config: TrainConfig,
) -> TrainData:
    """Extract features and split each volume's voxels into train/validation.

    The split is a seeded permutation per volume; feature scaling uses
    training-voxel statistics only.
    """
    if not volumes:
        raise InvalidArgumentError("need at least one volume")
    rng = np.random.default_rng([config.seed, 0x5EED])
    num_classes = max(lab.num_classes for _, lab in volumes)
    xs, ys, val = [], [], []
    for vol, lab in volumes:
        if vol.dims != lab.dims:
            raise ShapeError(f"volume dims {vol.dims} != label dims {lab.dims}")
        feats = extract_features(vol, config.features)
        perm = rng.permutation(vol.size)
        n_val = max(1, int(round(config.validation_fraction * vol.size)))
        vi, ti = np.sort(perm[:n_val]), np.sort(perm[n_val:])
        xs.append(feats[ti])
        ys.append(lab.labels[ti])
        val.append((feats[vi], lab.labels[vi]))
    x = np.concatenate(xs)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0] = 1.0
    return TrainData(
        x=(x - mean) / std,
        y=np.concatenate(ys),
        val=[((vx - mean) / std, vy) for vx, vy in val],
        num_classes=num_classes,
        mean=mean,
        std=std,
    )


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Voxel visiting order for one epoch; a pure function of (seed, epoch)."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def train_epoch(
    params: MlpParams,
    velocity: MlpParams,
    x: np.ndarray,
    y: np.ndarray,
    weights: Sequence[float],
    config: TrainConfig,
    epoch: int,
) -> tuple[MlpParams, MlpParams, list[float]]:
    """One epoch of SGD with momentum. Returns new params, velocity and the
    per-batch training losses (measured before each update)."""
    if len(x) == 0:
        raise InvalidArgumentError("no training voxels")
    params, velocity = params.copy(), velocity.copy()
    order = epoch_order(len(x), config.seed, epoch)
    if config.voxels_per_epoch is not None:
        order = order[: config.voxels_per_epoch]
    trace = []
    for start in range(0, len(order), config.batch_size):
        idx = order[start : start + config.batch_size]
        xb, yb = x[idx], y[idx]
        trace.append(batch_loss(params, xb, yb, weights, config.smoothing, config.include_background))
        grads = backward(params, xb, yb, weights, config.smoothing, config.include_background)
        for name in MlpParams.NAMES:
            v = getattr(velocity, name)
            v *= config.momentum
            v -= config.learning_rate * getattr(grads, name)
            getattr(params, name)[...] += v
    return params, velocity, trace


def evaluate(params: MlpParams, validation: Sequence[tuple[np.ndarray, np.ndarray]], num_classes: int) -> np.ndarray:
    """Hard Dice per foreground class with confusion counts pooled over volumes."""
    if not validation:
        raise InvalidArgumentError("empty validation set")
    return pooled_dice(((predict(params, vx), vy) for vx, vy in validation), num_classes)


# --------------------------------------------------------------------------
# experiment
# --------------------------------------------------------------------------


@dataclass
class ExperimentReport:
    strategy: str
    seed: int
    class_names: list[str]
    prevalence: list[float]
    scores: list[list[float]]  # per epoch, validation Dice after that epoch
    weights: list[list[float]]  # per epoch, scheduler output at that epoch's end
    applied_weights: list[list[float]]  # per epoch, weights used while training it
    frozen: list[list[bool]]
    checks: list[dict | None]  # per epoch plateau test (class_id, C, triggered)
    events: list[dict]
    train_loss: list[float]
    final_dice: list[float]
    config: dict
    schema_version: int = SCHEMA_VERSION

    @property
    def num_classes(self) -> int:
        return len(self.final_dice)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentReport:
        if d.get("schema_version") != SCHEMA_VERSION:
            raise InvalidArgumentError(f"unsupported report schema {d.get('schema_version')!r}")
        return cls(**d)


def run_experiment(
    config: TrainConfig,
    volumes: Sequence[tuple[VoxelGrid, LabelGrid]],
    class_names: Sequence[str] | None = None,
) -> ExperimentReport:
    """Train for ``config.epochs`` epochs, re-weighting classes after each."""
    from .volumes import class_prevalence  # local: keeps the module import light

    data = prepare_data(volumes, config)
    n = data.num_classes
    rng = np.random.default_rng([config.seed, 0x1417])
    bounds = (data.x.min(axis=0), data.x.max(axis=0))
    params = MlpParams.init(data.x.shape[1], config.hidden, n + 1, rng, bounds, config.init_out_scale)
    velocity = MlpParams.zeros_like(params)
    scheduler = sched.LossScheduler(n, config.scheduler)

    all_labels = np.concatenate([lab.labels for _, lab in volumes])
    prevalence = class_prevalence(LabelGrid((all_labels.size, 1, 1), all_labels, n))
    names = list(class_names) if class_names is not None else [f"class {i + 1}" for i in range(n)]

    scores, logged, applied, frozen, checks, events, losses = [], [], [], [], [], [], []
    for epoch in range(1, config.epochs + 1):
        current = list(scheduler.weights)
        params, velocity, trace = train_epoch(params, velocity, data.x, data.y, current, config, epoch)
        s = evaluate(params, data.val, n)
        before = scheduler.state
        new_weights = scheduler.step(s)
        st = scheduler.state
        sched.check_transition(before, st, config.scheduler)

        applied.append(current)
        scores.append([float(v) for v in s])
        logged.append([float(v) for v in new_weights])
        frozen.append(list(st.frozen))
        losses.append(float(np.mean(trace)))
        check = st.last_check
        if check is None or check.class_index is None:
            checks.append(None)
        else:
            checks.append({"class_id": check.class_index + 1, "C": float(check.c), "triggered": check.triggered})
            if check.triggered:
                events.append(
                    {"epoch": epoch, "class_id": check.class_index + 1, "C": float(check.c), "score": float(s[check.class_index])}
                )
        log.info("epoch %d loss %.4f mean dice %.4f", epoch, losses[-1], float(np.mean(s)))

    return ExperimentReport(
        strategy=config.scheduler.strategy.value,
        seed=config.seed,
        class_names=names,
        prevalence=[float(p) for p in prevalence],
        scores=scores,
        weights=logged,
        applied_weights=applied,
        frozen=frozen,
        checks=checks,
        events=events,
        train_loss=losses,
        final_dice=scores[-1],
        config=config.to_dict(),
    )
