"""
Seeded imbalanced 3D phantoms.

Each foreground class is one ellipsoidal blob. Blobs are placed largest
first by rejection sampling: a blob is the ``n`` voxels closest to a random
centre under a random ellipsoidal metric, so every class gets exactly its
target voxel count, and the draw is rejected if it touches an earlier blob.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GenerationError, InvalidArgumentError
from .volumes import LabelGrid, VoxelGrid, array_to_flat

# Abdominal CT prevalence profile (fraction of labelled voxels per organ).
ORGAN_NAMES = (
    "Liver",
    "Stomach",
    "Spleen",
    "R kidney",
    "L kidney",
    "Aorta",
    "IVC",
    "Pancreas",
    "Veins",
    "Gallbladder",
    "Oesophagus",
    "R Adrenal",
    "L Adrenal",
)
ORGAN_PREVALENCE = (0.552, 0.141, 0.091, 0.051, 0.051, 0.031, 0.028, 0.028, 0.011, 0.009, 0.005, 0.001, 0.001)

MAX_RETRIES = 1000


@dataclass(frozen=True)
class PhantomConfig:
    dims: tuple[int, int, int] = (64, 64, 64)
    seed: int = 0
    prevalences: tuple[float, ...] = ORGAN_PREVALENCE
    class_names: tuple[str, ...] = ORGAN_NAMES
    labelled_fraction: float = 0.5
    noise_sigma: float = 5.0
    intensity_base: float = 40.0
    intensity_step: float = 10.0
    min_class_voxels: int = 8
    spacing: tuple[float, float, float] = field(default=(1.0, 1.0, 1.0))

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 16:
            raise InvalidArgumentError(f"each phantom dimension must be >= 16, got {dims}")
        object.__setattr__(self, "dims", dims)
        prev = tuple(float(p) for p in self.prevalences)
        if not prev or min(prev) <= 0 or abs(sum(prev) - 1.0) > 1e-6:
            raise InvalidArgumentError("prevalences must be positive and sum to 1")
        object.__setattr__(self, "prevalences", prev)
        if len(self.class_names) != len(prev):
            names = tuple(f"class {i + 1}" for i in range(len(prev)))
            object.__setattr__(self, "class_names", names)
        if not 0 < self.labelled_fraction < 1:
            raise InvalidArgumentError("labelled_fraction must lie in (0, 1)")
        if self.noise_sigma < 0:
            raise InvalidArgumentError("noise_sigma must be non-negative")

    @property
    def num_classes(self) -> int:
        return len(self.prevalences)

    def class_mean(self, c: int) -> float:
        return self.intensity_base + self.intensity_step * c

    def target_counts(self) -> np.ndarray:
        total = round(self.labelled_fraction * np.prod(self.dims))
        return np.rint(np.asarray(self.prevalences) * total).astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "seed": self.seed,
            "prevalences": list(self.prevalences),
            "class_names": list(self.class_names),
            "labelled_fraction": self.labelled_fraction,
            "noise_sigma": self.noise_sigma,
            "intensity_base": self.intensity_base,
            "intensity_step": self.intensity_step,
            "min_class_voxels": self.min_class_voxels,
            "spacing": list(self.spacing),
        }


def _place_blob(rng, occupied: np.ndarray, n: int) -> np.ndarray | None:
    """Try once to carve an ``n``-voxel ellipsoidal blob; return its voxel
    coordinates (k, 3) or None when it collides or does not fit."""
    dims = np.array(occupied.shape)
    aspect = rng.uniform(0.6, 1.6, size=3)
    aspect /= np.cbrt(aspect.prod())
    radii = np.cbrt(3 * n / (4 * np.pi)) * aspect
    centre = rng.uniform(0, dims) - 0.5

    half = np.ceil(radii * 1.6).astype(int) + 2
    lo = np.maximum(np.floor(centre).astype(int) - half, 0)
    hi = np.minimum(np.floor(centre).astype(int) + half + 1, dims)
    if np.prod(hi - lo) < n:
        return None
    axes = [np.arange(lo[a], hi[a]) for a in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    dist = ((gx - centre[0]) / radii[0]) ** 2 + ((gy - centre[1]) / radii[1]) ** 2 + ((gz - centre[2]) / radii[2]) ** 2
    order = np.argsort(dist, axis=None, kind="stable")[:n]
    pts = np.stack([gx.ravel()[order], gy.ravel()[order], gz.ravel()[order]], axis=1)
    if occupied[pts[:, 0], pts[:, 1], pts[:, 2]].any():
        return None
    return pts


def generate_phantom(config: PhantomConfig) -> tuple[VoxelGrid, LabelGrid]:
    """Build one (intensity, label) pair, fully determined by ``config.seed``."""
    counts = config.target_counts()
    if counts.min() < config.min_class_voxels:
        rarest = int(np.argmin(counts)) + 1
        raise GenerationError(
            f"class {rarest} would get {counts.min()} voxels at dims {config.dims}; "
            f"at least {config.min_class_voxels} required"
        )
    rng = np.random.default_rng(config.seed)
    labels = np.zeros(config.dims, dtype=np.int64)
    occupied = np.zeros(config.dims, dtype=bool)
    # largest blobs first; stable so equal counts keep class order
    for idx in np.argsort(-counts, kind="stable"):
        c = int(idx) + 1
        for _ in range(MAX_RETRIES):
            pts = _place_blob(rng, occupied, int(counts[idx]))
            if pts is not None:
                break
        else:
            raise GenerationError(f"could not place class {c} after {MAX_RETRIES} attempts")
        labels[pts[:, 0], pts[:, 1], pts[:, 2]] = c
        occupied[pts[:, 0], pts[:, 1], pts[:, 2]] = True

    means = np.array([config.class_mean(c) for c in range(config.num_classes + 1)])
    image = means[labels]
    if config.noise_sigma > 0:
        image = image + config.noise_sigma * rng.standard_normal(config.dims)
    image = image.astype(np.float32)

    volume = VoxelGrid(config.dims, array_to_flat(image), config.spacing)
    truth = LabelGrid(config.dims, array_to_flat(labels), config.num_classes, config.spacing)
    return volume, truth


def generate_dataset(base_seed: int, count: int, config: PhantomConfig | None = None):
    """``count`` phantoms; phantom ``i`` is generated with seed ``base_seed + i``."""
    if count < 1:
        raise InvalidArgumentError("count must be at least 1")
    config = config or PhantomConfig()
    out = []
    for i in range(count):
        cfg = PhantomConfig(**{**config.__dict__, "seed": base_seed + i})
        out.append(generate_phantom(cfg))
    return out
