"""Randomized logistic regression (stability selection with an l1-logistic base).

Every iteration fits :class:`~stabsel.sparse_logit.SparseLogisticRegression`
on a class-stratified subsample without replacement, with each feature's
penalty divided by a weight drawn uniformly from ``{alpha_weakness, 1}``.
A feature's selection frequency is the fraction of iterations in which its
weight is nonzero. Iteration ``i`` draws everything from its own random
substream derived from ``(random_state, i)``, so results do not depend on
how iterations are scheduled across workers.
"""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_probability, check_Xy, child_rng
from .exceptions import ArgumentError
from .sparse_logit import SparseLogisticRegression, lambda_grid

logger = logging.getLogger(__name__)

MAX_RESAMPLE = 100


def k_max_heuristic(n, p):
    """Number of variables one sparse fit can reliably select: round(n / ln p)."""
    if n < 1 or p < 2:
        raise ArgumentError("need n >= 1 and p >= 2")
    return int(math.floor(n / math.log(p) + 0.5))


def max_recoverable_group(tau):
    """Largest group of interchangeable features still recovered at threshold ``tau``."""
    if not 0 < tau <= 1:
        raise ArgumentError(f"tau must lie in (0, 1], got {tau}")
    return int(math.floor(1.0 / tau + 1e-9))


@dataclass
class SelectionProfile:
    frequencies: np.ndarray
    m: int
    config: dict = field(default_factory=dict)

    @property
    def counts(self):
        return np.rint(self.frequencies * self.m).astype(np.int64)

    def select(self, tau):
        return select(self, tau)

    def to_json(self):
        return json.dumps({"m": self.m, "frequencies": self.frequencies.tolist(),
                           "config": self.config}, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls(np.asarray(data["frequencies"], dtype=np.float64), int(data["m"]),
                   data.get("config", {}))


def select(profile, tau):
    """Indices with selection frequency >= ``tau``."""
    tau = check_probability(tau, "tau")
    return np.flatnonzero(profile.frequencies >= tau)


def stratified_subsample(y, fraction, rng):
    """floor(fraction * n) row indices, per-class counts proportional and >= 1."""
    n = y.shape[0]
    n_sub = int(math.floor(fraction * n))
    pos = np.flatnonzero(y > 0)
    neg = np.flatnonzero(y < 0)
    n_pos = int(round(n_sub * pos.size / n))
    n_pos = min(max(n_pos, 1), pos.size)
    n_neg = min(n_sub - n_pos, neg.size)
    if n_neg < 1 or n_pos < 1:
        raise ArgumentError(f"cannot draw a two-class subsample of {n_sub} from {n} samples")
    rows = np.concatenate([rng.choice(pos, n_pos, replace=False),
                           rng.choice(neg, n_neg, replace=False)])
    return np.sort(rows)


class RandomizedLogisticRegression(SelectorMixin, BaseEstimator):
    """Stability selection with randomized l1-logistic regression.

    Parameters
    ----------
    n_iter : int
        Number of randomized fits (``m``).
    subsample_fraction : float in (0, 1]
    alpha_weakness : float in (0, 1]
        Lower value of the two-point rescaling distribution.
    tau : float in [0, 1]
        Frequency threshold used by ``get_support`` / ``transform``.
    lam : float or None
        Fixed penalty for every iteration.
    lam_ratio : float or None
        Penalty as a fraction of each iteration's own lambda_max.
        When both ``lam`` and ``lam_ratio`` are None, one penalty is picked
        on a pilot subsample as the grid point whose support size is closest
        to ``k_max_heuristic(subsample size, p)``.
    n_jobs : int
        joblib workers; output is identical for any value.
    """

    def __init__(self, n_iter=200, *, subsample_fraction=0.5, alpha_weakness=0.5,
                 tau=0.01, lam=None, lam_ratio=None, n_lambdas=30, lambda_min_ratio=1e-3,
                 tol=1e-6, max_iter=1000, random_state=0, n_jobs=1):
        self.n_iter = n_iter
        self.subsample_fraction = subsample_fraction
        self.alpha_weakness = alpha_weakness
        self.tau = tau
        self.lam = lam
        self.lam_ratio = lam_ratio
        self.n_lambdas = n_lambdas
        self.lambda_min_ratio = lambda_min_ratio
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _check_params(self):
        if self.n_iter < 1:
            raise ArgumentError("n_iter must be >= 1")
        check_probability(self.subsample_fraction, "subsample_fraction", open_low=True)
        check_probability(self.alpha_weakness, "alpha_weakness", open_low=True)
        check_probability(self.tau, "tau")

    def _draw(self, y, p, key):
        rng = child_rng(self.random_state, key)
        for _ in range(MAX_RESAMPLE):
            rows = stratified_subsample(y, self.subsample_fraction, rng)
            if np.unique(y[rows]).size == 2:
                break
        else:
            raise ArgumentError("no two-class subsample after retry cap")
        scales = np.where(rng.random(p) < 0.5, self.alpha_weakness, 1.0)
        order_seed = int(rng.integers(2**32))
        return rows, scales, order_seed

    def _pilot_lambda(self, X, y):
        rows = stratified_subsample(y, self.subsample_fraction,
                                    child_rng(self.random_state, "pilot"))
        Xp, yp = X[rows], y[rows]
        k_target = k_max_heuristic(rows.size, X.shape[1])
        est = SparseLogisticRegression(tol=self.tol, max_iter=self.max_iter, warm_start=True)
        best, best_gap = None, None
        for lam in lambda_grid(est.lambda_max(Xp, yp), self.n_lambdas, self.lambda_min_ratio):
            est.set_params(lam=lam).fit(Xp, yp)
            gap = abs(np.count_nonzero(est.coef_) - k_target)
            # strict improvement keeps the larger lambda on ties
            if best_gap is None or gap < best_gap:
                best, best_gap = lam, gap
        return float(best), k_target

    def _one(self, X, y, i, lam):
        rows, scales, order_seed = self._draw(y, X.shape[1], ("iteration", i))
        est = SparseLogisticRegression(feature_scales=scales, tol=self.tol,
                                       max_iter=self.max_iter, selection="random",
                                       random_state=order_seed)
        Xs, ys = X[rows], y[rows]
        if self.lam_ratio is not None:
            lam = self.lam_ratio * est.lambda_max(Xs, ys)
        est.set_params(lam=lam).fit(Xs, ys)
        return est.coef_ != 0

    def fit(self, X, y):
        self._check_params()
        X, y = check_Xy(X, y)
        n, p = X.shape
        if self.lam is not None:
            lam, k_target = float(self.lam), None
        elif self.lam_ratio is not None:
            lam, k_target = None, None
        else:
            lam, k_target = self._pilot_lambda(X, y)
        logger.info("randomized logistic: n=%d p=%d m=%d lam=%s", n, p, self.n_iter, lam)

        supports = Parallel(n_jobs=self.n_jobs)(
            delayed(_run_chunk)(self, X, y, chunk, lam)
            for chunk in np.array_split(np.arange(self.n_iter), max(1, _n_chunks(self.n_jobs))))
        counts = np.zeros(p, dtype=np.int64)
        for c in supports:
            counts += c
        self.counts_ = counts
        self.frequencies_ = counts / self.n_iter
        self.lam_ = lam
        self.k_max_ = k_target
        self.n_features_in_ = p
        return self

    @property
    def scores_(self):
        return self.frequencies_

    def profile(self):
        check_is_fitted(self, "frequencies_")
        config = {k: v for k, v in self.get_params().items() if k != "n_jobs"}
        config["lam_used"] = self.lam_
        return SelectionProfile(self.frequencies_.copy(), int(self.n_iter), config)

    def _get_support_mask(self):
        check_is_fitted(self, "frequencies_")
        return self.frequencies_ >= self.tau


def _n_chunks(n_jobs):
    return 1 if n_jobs in (None, 1) else (n_jobs if n_jobs > 0 else 8)


def _run_chunk(est, X, y, iterations, lam):
    counts = np.zeros(X.shape[1], dtype=np.int64)
    for i in iterations:
        counts += est._one(X, y, int(i), lam)
    return counts


def run_stability(dataset, **params):
    """Fit a :class:`RandomizedLogisticRegression` on a dataset; return its profile."""
    return RandomizedLogisticRegression(**params).fit(dataset.X, dataset.y).profile()
