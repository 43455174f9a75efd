"""Coordinate-based baseline: peak picking and activation-likelihood maps.

Peaks are in-mask voxels above a threshold that are strictly greater than
all of their in-mask 26-neighbors. Each peak contributes a Gaussian
modeled-activation map ``exp(-d^2 / (2 sigma^2))`` with ``sigma = fwhm /
2.3548`` (distances in mm); maps combine as a probabilistic union
``1 - prod(1 - MA_i)``, or by voxelwise maximum when ``combine="max"``.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_matrix
from .exceptions import ArgumentError, ShapeError
from .synth import FWHM_TO_SIGMA
from .volume import ContrastImage, Dataset


@dataclass(frozen=True)
class AleParams:
    fwhm_mm: float = 10.0
    peak_threshold: float = 3.0
    min_peak_separation_mm: float = 0.0
    combine: str = "union"

    def __post_init__(self):
        if self.fwhm_mm <= 0:
            raise ArgumentError("fwhm_mm must be positive")
        if self.min_peak_separation_mm < 0:
            raise ArgumentError("min_peak_separation_mm must be nonnegative")
        if self.combine not in ("union", "max"):
            raise ArgumentError(f"unknown combine rule {self.combine!r}")

    @property
    def sigma_mm(self):
        return self.fwhm_mm * FWHM_TO_SIGMA


@dataclass(frozen=True, eq=False)
class PeakSet:
    """Peaks as grid coordinates (k, 3) with their values, highest first."""

    coords: np.ndarray
    values: np.ndarray
    threshold: float
    source_id: str = ""

    def __len__(self):
        return self.values.shape[0]

    def coords_mm(self, space):
        return self.coords * np.asarray(space.voxel_size_mm)

    def to_csv(self, path, space):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x_mm", "y_mm", "z_mm", "value"])
            for (x, y, z), v in zip(self.coords_mm(space), self.values):
                writer.writerow([f"{x:g}", f"{y:g}", f"{z:g}", repr(float(v))])


_FOOTPRINT = np.ones((3, 3, 3), dtype=bool)
_FOOTPRINT[1, 1, 1] = False


def extract_peaks(image, params=AleParams(), source_id=""):
    space = image.space
    grid = space.to_grid(image.values, fill=-np.inf)
    neighbor_max = maximum_filter(grid, footprint=_FOOTPRINT, mode="constant", cval=-np.inf)
    is_peak = space.mask & (grid > neighbor_max) & (grid >= params.peak_threshold)
    flat = np.flatnonzero(space.from_grid(is_peak))
    coords = space.coords[flat]
    values = image.values[flat]
    # highest value first; equal values keep the lexicographically smallest coordinate first
    order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0], -values))
    coords, values = coords[order], values[order]
    if params.min_peak_separation_mm > 0 and values.size > 1:
        mm = coords * np.asarray(space.voxel_size_mm)
        keep = []
        for i in range(values.size):
            if all(np.linalg.norm(mm[i] - mm[j]) >= params.min_peak_separation_mm for j in keep):
                keep.append(i)
        coords, values = coords[keep], values[keep]
    return PeakSet(coords, values, params.peak_threshold, source_id)


def ale_map(peaks, space, params=AleParams()):
    """Activation-likelihood image from a peak set (all zeros when empty)."""
    xyz = space.coords_mm()
    two_sigma2 = 2.0 * params.sigma_mm ** 2
    if params.combine == "max":
        out = np.zeros(space.p)
        for c in peaks.coords_mm(space):
            np.maximum(out, np.exp(-np.sum((xyz - c) ** 2, axis=1) / two_sigma2), out=out)
        return ContrastImage(space, out)
    miss = np.ones(space.p)
    for c in peaks.coords_mm(space):
        miss *= 1.0 - np.exp(-np.sum((xyz - c) ** 2, axis=1) / two_sigma2)
    return ContrastImage(space, 1.0 - miss)


def ale_featurize(dataset, params=AleParams()):
    """Replace every row of ``dataset`` by the ALE map of its peaks."""
    if dataset.space is None:
        raise ArgumentError("ALE features need the dataset's VolumeSpace")
    X = AleTransformer(dataset.space, **_param_dict(params)).transform(dataset.X)
    return dataset.with_features(X, dataset.space)


def _param_dict(params):
    return {"fwhm_mm": params.fwhm_mm, "peak_threshold": params.peak_threshold,
            "min_peak_separation_mm": params.min_peak_separation_mm,
            "combine": params.combine}


class AleTransformer(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping contrast images to ALE maps."""

    def __init__(self, space=None, fwhm_mm=10.0, peak_threshold=3.0,
                 min_peak_separation_mm=0.0, combine="union"):
        self.space = space
        self.fwhm_mm = fwhm_mm
        self.peak_threshold = peak_threshold
        self.min_peak_separation_mm = min_peak_separation_mm
        self.combine = combine

    def _params(self):
        return AleParams(self.fwhm_mm, self.peak_threshold,
                         self.min_peak_separation_mm, self.combine)

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        if self.space is None:
            raise ArgumentError("AleTransformer needs a VolumeSpace")
        X = check_matrix(X)
        if X.shape[1] != self.space.p:
            raise ShapeError(f"expected {self.space.p} voxels, got {X.shape[1]}")
        params = self._params()
        out = np.empty_like(X)
        for i, row in enumerate(X):
            peaks = extract_peaks(ContrastImage(self.space, row), params)
            out[i] = ale_map(peaks, self.space, params).values
        return out


__all__ = ["AleParams", "PeakSet", "extract_peaks", "ale_map", "ale_featurize",
           "AleTransformer", "Dataset"]
