"""Synthetic reference/target experiments with known discriminative support.

Each row of a sampled dataset is::

    gain * (background + (y / 2) * effect_size * 1[support]) + offset + noise

where ``noise`` is white Gaussian noise smoothed by a Gaussian kernel of the
requested FWHM and rescaled so its per-voxel standard deviation is
``noise_sigma``. Support sets are unions of parcels so parcel-level methods
have a fair ground truth.
"""

import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.ndimage import gaussian_filter, gaussian_filter1d

from ._validation import child_rng
from .exceptions import ArgumentError, ConfigError
from .parcellation import Parcellation
from .volume import Dataset, build_space, ellipsoid_mask

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))  # 1 / 2.3548
TRUNCATE = 4.0


@dataclass(frozen=True, eq=False)
class GroundTruth:
    support: np.ndarray
    effect_size: float
    parcel_labels: np.ndarray
    shared_fraction: float = 1.0

    def __post_init__(self):
        if self.effect_size < 0:
            raise ArgumentError("effect_size must be nonnegative")
        if not 0.0 <= self.shared_fraction <= 1.0:
            raise ArgumentError("shared_fraction must lie in [0, 1]")
        support = np.unique(np.asarray(self.support, dtype=np.int64))
        if support.size and (support[0] < 0 or support[-1] >= self.parcel_labels.size):
            raise ArgumentError("support index out of range")
        object.__setattr__(self, "support", support)

    @property
    def k(self):
        return int(self.support.size)

    def indicator(self):
        out = np.zeros(self.parcel_labels.size, dtype=bool)
        out[self.support] = True
        return out


@dataclass(frozen=True)
class ScannerModel:
    gain: float = 1.0
    offset: float = 0.0
    noise_sigma: float = 1.0
    smooth_fwhm_mm: float = 0.0

    def __post_init__(self):
        if self.gain <= 0:
            raise ArgumentError("gain must be positive")
        # zero noise is allowed as the noise-free limit
        if self.noise_sigma < 0:
            raise ArgumentError("noise_sigma must be nonnegative")
        if self.smooth_fwhm_mm < 0:
            raise ArgumentError("smooth_fwhm_mm must be nonnegative")


def _labels(parcels):
    if isinstance(parcels, Parcellation):
        return parcels.labels
    return np.asarray(parcels, dtype=np.int64)


def block_parcellation(space, block=3):
    """Cubic blocks of ``block`` voxels per side, intersected with the mask."""
    coords = space.coords // int(block)
    _, first, inverse = np.unique(coords, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    rank = np.empty_like(first)
    rank[np.argsort(first)] = np.arange(first.size)
    return Parcellation(rank[inverse].astype(np.int64), int(first.size))


def make_ground_truth(space, parcels, n_active_parcels, effect_size, seed):
    """Support = voxels of ``n_active_parcels`` parcels drawn uniformly by ``seed``."""
    labels = _labels(parcels)
    if labels.shape != (space.p,):
        raise ArgumentError("parcel labels must cover every voxel of the space")
    n_parcels = int(labels.max()) + 1
    if not 0 <= n_active_parcels <= n_parcels:
        raise ArgumentError(f"n_active_parcels={n_active_parcels} exceeds {n_parcels} parcels")
    rng = child_rng(seed, "ground_truth")
    active = rng.choice(n_parcels, size=n_active_parcels, replace=False)
    support = np.flatnonzero(np.isin(labels, active))
    return GroundTruth(support, float(effect_size), labels)


def derive_target(truth, shared_fraction, new_effect_size, seed):
    """Target truth keeping ceil(shared_fraction * k) reference support voxels.

    Kept voxels are taken parcel by parcel in a seeded random parcel order;
    the remainder comes from parcels outside the reference support, again
    whole parcels in random order with the last one truncated to keep k fixed.
    """
    if not 0.0 <= shared_fraction <= 1.0:
        raise ArgumentError("shared_fraction must lie in [0, 1]")
    rng = child_rng(seed, "derive_target")
    labels = truth.parcel_labels
    k = truth.k
    n_keep = math.ceil(shared_fraction * k)

    def by_parcels(voxels):
        groups = {}
        for v in voxels:
            groups.setdefault(int(labels[v]), []).append(int(v))
        keys = sorted(groups)
        order = rng.permutation(len(keys))
        return [v for i in order for v in groups[keys[i]]]

    kept = by_parcels(truth.support)[:n_keep]
    outside = np.setdiff1d(np.arange(labels.size), truth.support)
    fresh = by_parcels(outside)[:k - n_keep]
    return GroundTruth(np.asarray(kept + fresh, dtype=np.int64), float(new_effect_size),
                       labels, float(shared_fraction))


def smoothing_sigma_vox(fwhm_mm, voxel_size_mm):
    return tuple(fwhm_mm * FWHM_TO_SIGMA / s for s in voxel_size_mm)


def _kernel_norm(sigma_vox):
    """L2 norm of the truncated separable Gaussian kernel."""
    norm2 = 1.0
    for s in sigma_vox:
        if s == 0:
            continue
        half = int(TRUNCATE * s + 0.5)
        impulse = np.zeros(2 * half + 1)
        impulse[half] = 1.0
        k = gaussian_filter1d(impulse, s, truncate=TRUNCATE, mode="constant")
        norm2 *= float(k @ k)
    return math.sqrt(norm2)


def smooth_noise(space, n_rows, fwhm_mm, rng):
    """Unit-variance Gaussian noise, smoothed on the full grid and masked."""
    out = np.empty((n_rows, space.p))
    if fwhm_mm == 0:
        for i in range(n_rows):
            out[i] = rng.standard_normal(space.p)
        return out
    sigma = smoothing_sigma_vox(fwhm_mm, space.voxel_size_mm)
    norm = _kernel_norm(sigma)
    for i in range(n_rows):
        grid = rng.standard_normal(space.dims)
        grid = gaussian_filter(grid, sigma, truncate=TRUNCATE, mode="constant")
        out[i] = space.from_grid(grid) / norm
    return out


def sample_dataset(space, truth, scanner, n_per_class, seed, background=None):
    """Balanced two-class dataset; rows ``i`` and ``n_per_class + i`` share a subject id.

    The first ``n_per_class`` rows have label +1.
    """
    if n_per_class < 1:
        raise ArgumentError("n_per_class must be at least 1")
    rng = child_rng(seed, "sample_dataset")
    n = 2 * n_per_class
    y = np.repeat([1, -1], n_per_class)
    signal = np.zeros(space.p) if background is None else np.asarray(background, float)
    pattern = truth.effect_size * truth.indicator()
    X = scanner.gain * (signal + 0.5 * y[:, None] * pattern) + scanner.offset
    if scanner.noise_sigma > 0:
        X = X + scanner.noise_sigma * smooth_noise(space, n, scanner.smooth_fwhm_mm, rng)
    subjects = np.tile([f"sub-{i:03d}" for i in range(n_per_class)], 2)
    ids = [f"{s}_{'pos' if lab > 0 else 'neg'}" for s, lab in zip(subjects, y)]
    return Dataset(X, y, ids, space, subjects)


@dataclass
class SynthConfig:
    """Generator settings as read from a JSON config block."""

    dims: tuple
    n_per_class: int
    effect_size: float
    mask: str = "ellipsoid"
    voxel_size_mm: tuple = (3.0, 3.0, 3.0)
    noise_sigma: float = 1.0
    smooth_fwhm_mm: float = 0.0
    gain: float = 1.0
    offset: float = 0.0
    n_active_parcels: int = 10
    parcel_block: int = 3
    shared_fraction: float = 1.0
    target_effect_size: float = None
    target_n_per_class: int = None
    target_gain: float = None
    target_offset: float = None
    n_database: int = 0
    seed: int = 0
    extra: dict = field(default_factory=dict)

    REQUIRED = ("dims", "n_per_class", "effect_size")

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("synth config must be a JSON object")
        for name in cls.REQUIRED:
            if name not in data:
                raise ConfigError(f"missing required field '{name}'")
        known = {f.name for f in fields(cls)} - {"extra"}
        kwargs = {k: v for k, v in data.items() if k in known}
        extra = {k: v for k, v in data.items() if k not in known}
        cfg = cls(**kwargs, extra=extra)
        if cfg.mask not in ("ellipsoid", "full"):
            raise ConfigError(f"field 'mask' must be 'ellipsoid' or 'full', got {cfg.mask!r}")
        if len(cfg.dims) != 3:
            raise ConfigError("field 'dims' must have three entries")
        return cfg

    def space(self):
        mask = None if self.mask == "full" else ellipsoid_mask(self.dims)
        return build_space(self.dims, self.voxel_size_mm, mask)

    def generate(self, seed=None):
        """Return (space, reference truth, target truth, reference, target)."""
        seed = self.seed if seed is None else seed
        space = self.space()
        parcels = block_parcellation(space, self.parcel_block)
        ref_truth = make_ground_truth(space, parcels, self.n_active_parcels,
                                      self.effect_size, (seed, "reference"))
        tgt_effect = self.effect_size if self.target_effect_size is None else self.target_effect_size
        tgt_truth = derive_target(ref_truth, self.shared_fraction, tgt_effect, (seed, "target"))
        ref_scanner = ScannerModel(1.0, 0.0, self.noise_sigma, self.smooth_fwhm_mm)
        tgt_scanner = ScannerModel(self.gain if self.target_gain is None else self.target_gain,
                                   self.offset if self.target_offset is None else self.target_offset,
                                   self.noise_sigma, self.smooth_fwhm_mm)
        n_tgt = self.n_per_class if self.target_n_per_class is None else self.target_n_per_class
        ref = sample_dataset(space, ref_truth, ref_scanner, self.n_per_class, (seed, "reference"))
        tgt = sample_dataset(space, tgt_truth, tgt_scanner, n_tgt, (seed, "target"))
        return space, ref_truth, tgt_truth, ref, tgt

    def generate_database(self, space, ref_truth, tgt_truth, seed=None):
        """``n_database`` extra datasets alternating the reference and target supports.

        They stand in for other experiments of a database: related
        activations, independent noise, reference scanner.
        """
        seed = self.seed if seed is None else seed
        scanner = ScannerModel(1.0, 0.0, self.noise_sigma, self.smooth_fwhm_mm)
        return [sample_dataset(space, (ref_truth, tgt_truth)[i % 2], scanner,
                               self.n_per_class, (seed, "database", i))
                for i in range(self.n_database)]
