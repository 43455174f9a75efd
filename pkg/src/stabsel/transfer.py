"""Inline and transfer learning over several feature spaces.

Inline learning is stratified K-fold cross-validation on one dataset, with
the penalty picked in each outer training set by an inner cross-validation
over a fixed log-spaced grid. Transfer learning refits on a whole training
dataset and scores the model on another dataset passed through the same
feature pipeline.

Feature spaces:

``raw``               voxel values as they are
``peaks``             activation-likelihood maps of each image's peaks
``parcels_specific``  parcel means, parcels learned on the training dataset
``parcels_meta``      parcel means, parcels learned on a separate database
"""

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import binomtest
from sklearn.model_selection import StratifiedKFold

from ._validation import check_Xy, child_seed
from .ale import AleParams, AleTransformer
from .exceptions import ArgumentError, ShapeError
from .inference import anova_screen, compare_arms, draw_cohort, paired_differences
from .parcellation import Parcellation, build_tree, cut, inverse_transform, transform
from .sparse_logit import SparseLogisticRegression, lambda_grid, lambda_max
from .stability import RandomizedLogisticRegression
from .volume import Dataset, adjacency

logger = logging.getLogger(__name__)

KINDS = ("peaks", "raw", "parcels_specific", "parcels_meta")


@dataclass(frozen=True)
class FeatureSpace:
    kind: str
    K: int = None
    ale: AleParams = AleParams()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ArgumentError(f"unknown feature space {self.kind!r}")
        if self.kind.startswith("parcels") and (self.K is None or self.K < 1):
            raise ArgumentError(f"{self.kind} needs a parcel count K >= 1")

    @property
    def name(self):
        return self.kind


@dataclass(frozen=True)
class CVConfig:
    outer_folds: int = 6
    inner_folds: int = 5
    n_lambdas: int = 30
    lambda_min_ratio: float = 1e-3
    tol: float = 1e-6
    max_iter: int = 1000


def learn_parcels(X, space, K):
    """Constrained Ward parcels of the columns of ``X`` on 6-connectivity."""
    return cut(build_tree(X, adjacency(space)), K)


class FeaturePipeline:
    """Featurizer frozen at fit time; ``transform`` maps voxel rows to features."""

    def __init__(self, space_spec, meta_parcels=None):
        self.space_spec = space_spec
        self.meta_parcels = meta_parcels

    def fit(self, dataset):
        kind = self.space_spec.kind
        self.space_ = dataset.space
        self.parcels_ = None
        if kind == "parcels_specific":
            self.parcels_ = learn_parcels(dataset.X, dataset.space, self.space_spec.K)
        elif kind == "parcels_meta":
            if self.meta_parcels is None:
                raise ArgumentError("parcels_meta needs a parcellation learned on the database")
            self.parcels_ = self.meta_parcels
        elif kind == "peaks":
            a = self.space_spec.ale
            self._ale = AleTransformer(dataset.space, a.fwhm_mm, a.peak_threshold,
                                       a.min_peak_separation_mm, a.combine)
        return self

    def transform(self, X):
        kind = self.space_spec.kind
        if X.shape[1] != self.space_.p:
            raise ShapeError(f"expected {self.space_.p} voxels, got {X.shape[1]}")
        if kind == "raw":
            return np.asarray(X, dtype=np.float64)
        if kind == "peaks":
            return self._ale.transform(X)
        return transform(self.parcels_, X)


def _standardize(Xtr, Xte):
    mean = Xtr.mean(0)
    scale = Xtr.std(0)
    scale[scale == 0] = 1.0
    return np.asfortranarray((Xtr - mean) / scale), (Xte - mean) / scale


def path_accuracies(Xtr, ytr, Xte, yte, grid, tol=1e-6, max_iter=1000):
    """Test accuracy at each penalty of a descending grid (warm-started path)."""
    Xtr, Xte = _standardize(Xtr, Xte)
    est = SparseLogisticRegression(standardize=False, warm_start=True, tol=tol, max_iter=max_iter)
    acc = np.empty(len(grid))
    for i, lam in enumerate(grid):
        est.set_params(lam=float(lam)).fit(Xtr, ytr)
        acc[i] = np.mean(est.predict(Xte) == yte)
    return acc


def _best_index(scores):
    # grid is descending, so the first maximum is the largest penalty
    return int(np.flatnonzero(scores == scores.max())[0])


@dataclass(eq=False)
class InlineResult:
    inline_accuracy: float
    fold_scores: np.ndarray
    fold_lambdas: np.ndarray
    lam: float
    grid: np.ndarray
    model: SparseLogisticRegression
    pipeline: FeaturePipeline = None
    space: FeatureSpace = None
    transfer: dict = field(default_factory=dict)


def inline_learn(X, y, seed, cv=CVConfig()):
    """Nested cross-validated accuracy and a final model refit at the modal penalty.

    ``X`` holds features already computed by a label-free pipeline.
    """
    X, y = check_Xy(X, y)
    n = X.shape[0]
    n_min = min(np.count_nonzero(y > 0), np.count_nonzero(y < 0))
    if cv.outer_folds < 2 or cv.outer_folds > n_min:
        raise ArgumentError(f"{cv.outer_folds} stratified folds need at least that many "
                            f"samples per class, have {n_min}")
    inner_min = n_min - int(np.ceil(n_min / cv.outer_folds))
    if cv.inner_folds < 2 or cv.inner_folds > inner_min:
        raise ArgumentError(f"{cv.inner_folds} inner folds exceed the {inner_min} samples per class")

    lam_hi = lambda_max(_standardize(X, X[:1])[0], y)
    grid = lambda_grid(lam_hi, cv.n_lambdas, cv.lambda_min_ratio)
    outer = StratifiedKFold(cv.outer_folds, shuffle=True,
                            random_state=child_seed(seed, "outer")).split(X, y)
    scores = np.empty(n)
    fold_lams = []
    for f, (tr, te) in enumerate(outer):
        inner = StratifiedKFold(cv.inner_folds, shuffle=True,
                                random_state=child_seed(seed, "inner", f))
        inner_acc = np.zeros(len(grid))
        for itr, iva in inner.split(X[tr], y[tr]):
            inner_acc += path_accuracies(X[tr][itr], y[tr][itr], X[tr][iva], y[tr][iva],
                                         grid, cv.tol, cv.max_iter)
        k = _best_index(inner_acc)
        fold_lams.append(k)
        # the path up to the chosen penalty reproduces the warm-started fit
        acc_path = _path_predictions(X[tr], y[tr], X[te], grid[:k + 1], cv)
        scores[te] = acc_path == y[te]

    counts = Counter(fold_lams)
    top = max(counts.values())
    k_final = min(k for k, c in counts.items() if c == top)
    model = SparseLogisticRegression(warm_start=True, tol=cv.tol, max_iter=cv.max_iter)
    for lam in grid[:k_final + 1]:
        model.set_params(lam=float(lam)).fit(X, y)
    return InlineResult(float(scores.mean()), scores, grid[np.asarray(fold_lams)],
                        float(grid[k_final]), grid, model)


def _path_predictions(Xtr, ytr, Xte, grid, cv):
    Xtr, Xte = _standardize(Xtr, Xte)
    est = SparseLogisticRegression(standardize=False, warm_start=True, tol=cv.tol,
                                   max_iter=cv.max_iter)
    for lam in grid:
        est.set_params(lam=float(lam)).fit(Xtr, ytr)
    return est.predict(Xte)


def transfer_apply(result, target):
    """Accuracy of a trained inline result on ``target`` voxel data."""
    X = result.pipeline.transform(target.X)
    if X.shape[1] != result.model.n_features_in_:
        raise ShapeError(f"model expects {result.model.n_features_in_} features, got {X.shape[1]}")
    return float(np.mean(result.model.predict(X) == target.y))


def inline_unit(dataset, space_spec, seed, cv, meta_parcels=None):
    pipe = FeaturePipeline(space_spec, meta_parcels).fit(dataset)
    res = inline_learn(pipe.transform(dataset.X), dataset.y, seed, cv)
    res.pipeline = pipe
    res.space = space_spec
    return res


def meta_parcellation(datasets, K):
    """Parcels learned on the row-concatenation of ``datasets`` (same space)."""
    if not datasets:
        raise ArgumentError("parcels_meta needs at least one database dataset")
    space = datasets[0].space
    for d in datasets[1:]:
        if d.space != space:
            raise ShapeError("database datasets live in different spaces")
    return learn_parcels(np.vstack([d.X for d in datasets]), space, K)


@dataclass(eq=False)
class StudyReport:
    directions: list
    spaces: list
    cells: dict
    summary: dict

    def header(self):
        return ["pair"] + [f"{s}_{m}" for s in self.spaces for m in ("trans", "in")]

    def rows(self):
        out = []
        for a, b in self.directions:
            row = [f"{a}->{b}"]
            for s in self.spaces:
                trans, inl = self.cells[(a, b, s)]
                row += [f"{trans:.4f}", f"{inl:.4f}"]
            out.append(row)
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            w.writerows(self.rows())

    def write_summary(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary, fh, indent=2, sort_keys=True)
            fh.write("\n")


def relative_performance(cells, directions, spaces):
    """Per space and mode: mean accuracy minus the best space's, with a sign test.

    The sign test counts transfer pairs where the best space beats the space
    (ties dropped); its one-sided p-value tests "significantly poorer".
    """
    out = {}
    for m, mode in enumerate(("trans", "in")):
        acc = {s: np.array([cells[(a, b, s)][m] for a, b in directions]) for s in spaces}
        means = {s: float(v.mean()) for s, v in acc.items()}
        best = max(spaces, key=lambda s: (means[s], -spaces.index(s)))
        block = {}
        for s in spaces:
            wins = int(np.sum(acc[best] > acc[s]))
            losses = int(np.sum(acc[best] < acc[s]))
            pval = 1.0 if wins + losses == 0 else float(
                binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue)
            block[s] = {"mean_accuracy": means[s], "relative": means[s] - means[best],
                        "sign_test_p": pval, "n_pairs": len(directions)}
        out[mode] = {"best": best, "spaces": block}
    return out


def run_study(datasets, pairs, spaces, seed, cv=CVConfig(), meta_datasets=None, n_jobs=1):
    """Inline accuracy per (dataset, space) and transfer accuracy both ways per pair.

    ``datasets`` maps names to :class:`Dataset`; ``pairs`` lists name pairs.
    Meta parcels are learned on ``meta_datasets`` (default: every dataset
    that is not part of a pair), never on a transfer target.
    """
    if not pairs:
        raise ArgumentError("study needs at least one dataset pair")
    in_pairs = sorted({name for pair in pairs for name in pair})
    for name in in_pairs:
        if name not in datasets:
            raise ArgumentError(f"unknown dataset {name!r}")
    if meta_datasets is None:
        meta_datasets = [n for n in sorted(datasets) if n not in in_pairs]
    if set(meta_datasets) & set(in_pairs):
        raise ArgumentError("meta-analytic database must not contain transfer targets")
    meta = {}
    for s in spaces:
        if s.kind == "parcels_meta" and s.K not in meta:
            meta[s.K] = meta_parcellation([datasets[n] for n in meta_datasets], s.K)

    units = [(name, s) for name in in_pairs for s in spaces]
    results = Parallel(n_jobs=n_jobs)(
        delayed(inline_unit)(datasets[name], s, child_seed(seed, "inline", name), cv,
                             meta.get(s.K) if s.kind == "parcels_meta" else None)
        for name, s in units)
    inline = dict(zip(((name, s.name) for name, s in units), results))

    directions = []
    for a, b in pairs:
        directions += [(a, b), (b, a)]
    names = [s.name for s in spaces]
    cells = {}
    for a, b in directions:
        for s in names:
            trained = inline[(a, s)]
            cells[(a, b, s)] = (transfer_apply(trained, datasets[b]), inline[(b, s)].inline_accuracy)
    summary = {"relative_performance": relative_performance(cells, directions, names),
               "sign_test": "binomial, one-sided, ties dropped",
               "lambdas": {f"{n}/{s}": inline[(n, s)].lam for n, s in sorted(inline)}}
    return StudyReport(directions, names, cells, summary)


@dataclass(eq=False)
class ScreeningResult:
    rows: dict
    profile: object
    parcels: Parcellation
    voxel_frequencies: np.ndarray
    selection: np.ndarray
    anova_selection: np.ndarray


def screening_study(reference, target, K, tau=0.01, cohort_sizes=(10, 20, 40), q=0.05,
                    seed=0, stability=None, n_jobs=1):
    """Select voxels on the reference experiment, then test target cohorts.

    Stability selection runs on reference parcel means; a voxel is selected
    when its parcel's frequency is at least ``tau``. The ANOVA arm keeps the
    same number of reference voxels ranked by F. Target data is only read
    after both selections are frozen.
    """
    params = {"n_iter": 200}
    params.update(stability or {})
    parcels = learn_parcels(reference.X, reference.space, K)
    Xp = transform(parcels, reference.X)
    est = RandomizedLogisticRegression(tau=tau, random_state=child_seed(seed, "stability"),
                                       n_jobs=n_jobs, **params).fit(Xp, reference.y)
    profile = est.profile()
    voxel_freq = inverse_transform(parcels, profile.frequencies)
    selection = np.flatnonzero(voxel_freq >= tau)
    anova_sel = anova_screen(reference, n_keep=selection.size)

    diff, _ = paired_differences(target)
    rows = {}
    for n_star in cohort_sizes:
        cohort = draw_cohort(diff, n_star, (child_seed(seed, "cohorts"),))
        rows[int(n_star)] = compare_arms(cohort, selection, anova_sel, q)
    return ScreeningResult(rows, profile, parcels, voxel_freq, selection, anova_sel)


__all__ = ["FeatureSpace", "CVConfig", "FeaturePipeline", "InlineResult", "inline_learn",
           "transfer_apply", "run_study", "StudyReport", "screening_study", "ScreeningResult",
           "learn_parcels", "meta_parcellation", "Dataset"]
