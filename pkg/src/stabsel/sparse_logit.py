"""l1-penalized logistic regression by majorization coordinate descent.

Minimizes, over weights ``w`` and an unpenalized intercept ``b``::

    sum_i log(1 + exp(-y_i (x_i . w + b))) + lam * sum_j |w_j| / s_j

with labels in {-1, +1} and optional per-feature scales ``s_j`` in (0, 1]
(all ones by default). A scale below one weakens a feature exactly as if
its column had been multiplied by ``s_j`` before an ordinary fit.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import _cd
from ._validation import check_matrix, check_n_features, check_Xy
from .exceptions import ArgumentError, ShapeError


@dataclass
class FitConfig:
    """Solver settings; ``lam`` is on the summed (not averaged) loss scale."""

    lam: float = 1.0
    max_iter: int = 1000
    tol: float = 1e-6
    feature_scales: np.ndarray = None

    def __post_init__(self):
        if self.lam < 0:
            raise ArgumentError("lam must be nonnegative")
        if self.tol <= 0:
            raise ArgumentError("tol must be positive")
        if self.max_iter < 1:
            raise ArgumentError("max_iter must be positive")


class SparseLogisticRegression(ClassifierMixin, BaseEstimator):
    """Binary l1-logistic classifier for -1/+1 labels.

    Parameters
    ----------
    lam : float
        Penalty on the summed logistic loss.
    tol : float
        Stop when a full sweep moves no coordinate (intercept included) by
        more than ``tol``, each change weighted by max(1, coordinate
        curvature) so that ``tol`` also bounds the gradient residual.
    max_iter : int
        Maximum number of sweeps.
    standardize : bool
        Center and scale features with statistics of the training data;
        ``coef_`` is then expressed in standardized units.
    feature_scales : array of shape (n_features,) or None
        Randomized-rescaling weights; feature j is penalized by ``lam / s_j``.
    selection : {"cyclic", "random"}
        Coordinate visiting order. "random" draws one permutation per fit
        from ``random_state``; with exactly duplicated columns this is what
        makes the selected copy random rather than always the first.
    warm_start : bool
        Start from the previous ``coef_``/``intercept_`` when refitting.
    debug : bool
        Assert after every sweep that the objective did not increase.

    Attributes
    ----------
    coef_, intercept_, n_iter_, converged_
    mean_, scale_ : standardization parameters (zeros/ones when disabled)
    train_scores_ : decision values on the (standardized) training data
    """

    def __init__(self, lam=1.0, *, tol=1e-6, max_iter=1000, standardize=True,
                 feature_scales=None, selection="cyclic", random_state=None,
                 warm_start=False, debug=False):
        self.lam = lam
        self.tol = tol
        self.max_iter = max_iter
        self.standardize = standardize
        self.feature_scales = feature_scales
        self.selection = selection
        self.random_state = random_state
        self.warm_start = warm_start
        self.debug = debug

    # -- helpers ---------------------------------------------------------

    def _standardization(self, X):
        if not self.standardize:
            return np.zeros(X.shape[1]), np.ones(X.shape[1])
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        return mean, scale

    def _scales(self, p):
        if self.feature_scales is None:
            return np.ones(p)
        s = np.asarray(self.feature_scales, dtype=np.float64)
        if s.shape != (p,):
            raise ShapeError(f"feature_scales must have length {p}")
        if np.any(s <= 0):
            raise ArgumentError("feature_scales must be positive")
        return s

    def penalty_weights(self, p):
        """Per-feature penalties ``lam / s_j``."""
        return self.lam / self._scales(p)

    def _transform(self, X):
        return (X - self.mean_) / self.scale_

    # -- API ---------------------------------------------------------------

    def fit(self, X, y):
        X, y = check_Xy(X, y)
        n, p = X.shape
        if self.lam < 0:
            raise ArgumentError("lam must be nonnegative")
        if self.tol <= 0 or self.max_iter < 1:
            raise ArgumentError("tol and max_iter must be positive")
        penalty = self.penalty_weights(p)

        mean, scale = self._standardization(X)
        Xs = np.asfortranarray((X - mean) / scale)

        if self.selection == "cyclic":
            order = np.arange(p, dtype=np.int64)
        elif self.selection == "random":
            order = np.random.default_rng(self.random_state).permutation(p).astype(np.int64)
        else:
            raise ArgumentError(f"unknown selection {self.selection!r}")

        if self.warm_start and hasattr(self, "coef_") and self.coef_.shape == (p,):
            w = self.coef_.copy()
            b = float(self.intercept_)
        else:
            w = np.zeros(p)
            n_pos = np.count_nonzero(y > 0)
            b = float(np.log(n_pos / (n - n_pos)))

        b, z, n_iter, converged = _cd.cd_logistic(
            Xs, y, w, b, penalty, order, int(self.max_iter), float(self.tol), bool(self.debug))

        self.mean_ = mean
        self.scale_ = scale
        self.coef_ = w
        self.intercept_ = float(b)
        self.n_iter_ = int(n_iter)
        self.converged_ = bool(converged)
        self.train_scores_ = z
        self.classes_ = np.array([-1, 1])
        self.n_features_in_ = p
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_n_features(X, self.coef_.shape[0])
        return self._transform(X) @ self.coef_ + self.intercept_

    def predict(self, X):
        return np.where(self.decision_function(X) >= 0, 1, -1)

    def support(self):
        """Indices of nonzero weights."""
        check_is_fitted(self, "coef_")
        return np.flatnonzero(self.coef_)

    def objective(self, X, y):
        """Penalized objective at the fitted parameters on raw ``X``."""
        X, y = check_Xy(X, y)
        Xs = np.ascontiguousarray(self._transform(X))
        return _cd.objective(Xs, y, self.coef_, self.intercept_,
                             self.penalty_weights(X.shape[1]))

    def lambda_max(self, X, y):
        """Smallest ``lam`` giving all-zero weights under this estimator's preprocessing."""
        X, y = check_Xy(X, y)
        mean, scale = self._standardization(X)
        return lambda_max((X - mean) / scale, y, self.feature_scales)

    def to_dict(self):
        check_is_fitted(self, "coef_")
        nz = np.flatnonzero(self.coef_)
        return {
            "lambda": float(self.lam),
            "intercept": self.intercept_,
            "n_features": int(self.coef_.shape[0]),
            "weights": [[int(j), float(self.coef_[j])] for j in nz],
            "standardization": {"mean": self.mean_.tolist(), "scale": self.scale_.tolist()},
            "converged": self.converged_,
            "n_iter": self.n_iter_,
        }

    @classmethod
    def from_dict(cls, data):
        model = cls(lam=data["lambda"])
        p = int(data["n_features"])
        model.coef_ = np.zeros(p)
        for j, v in data["weights"]:
            model.coef_[int(j)] = v
        model.intercept_ = float(data["intercept"])
        model.mean_ = np.asarray(data["standardization"]["mean"], dtype=np.float64)
        model.scale_ = np.asarray(data["standardization"]["scale"], dtype=np.float64)
        model.converged_ = bool(data.get("converged", True))
        model.n_iter_ = int(data.get("n_iter", 0))
        model.classes_ = np.array([-1, 1])
        model.n_features_in_ = p
        return model


def lambda_max(X, y, feature_scales=None):
    """Smallest penalty for which w = 0 satisfies the optimality conditions.

    Evaluated at w = 0 with the intercept at its optimum log(n+/n-); ``X`` is
    used as given (no standardization).
    """
    X, y = check_Xy(X, y)
    g = _cd.null_gradient(np.asfortranarray(X), y)
    if feature_scales is not None:
        g = g * np.asarray(feature_scales, dtype=np.float64)
    return float(np.max(np.abs(g))) if g.size else 0.0


def lambda_grid(lam_max, n_points=30, min_ratio=1e-3):
    """Descending log-spaced grid over [lam_max * min_ratio, lam_max]."""
    if lam_max <= 0:
        return np.zeros(1)
    return np.geomspace(lam_max, lam_max * min_ratio, n_points)


def loss_gradient(X, y, w, b):
    """Gradient of the unpenalized summed logistic loss in (w, b).

    Plain numpy, independent of the solver kernels.
    """
    X = check_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    z = X @ w + b
    r = -y * np.exp(-np.logaddexp(0.0, y * z))  # -y * sigmoid(-y z)
    return X.T @ r, float(r.sum())


def logistic_loss(X, y, w, b):
    z = np.asarray(X) @ w + b
    return float(np.sum(np.logaddexp(0.0, -np.asarray(y) * z)))


def kkt_violation(X, y, w, b, lam, feature_scales=None):
    """Largest violation of the l1-logistic optimality conditions.

    For active coordinates: |g_j + (lam/s_j) sign(w_j)|; for zeros:
    max(0, |g_j| - lam/s_j); plus |dL/db| for the intercept.
    """
    g, gb = loss_gradient(X, y, w, b)
    s = np.ones_like(g) if feature_scales is None else np.asarray(feature_scales, float)
    pen = lam / s
    active = w != 0
    viol = np.where(active, np.abs(g + pen * np.sign(w)), np.maximum(0.0, np.abs(g) - pen))
    return float(max(viol.max(initial=0.0), abs(gb)))


def fit(dataset, config=None, **kwargs):
    """Fit a :class:`SparseLogisticRegression` on a :class:`~stabsel.volume.Dataset`."""
    config = config or FitConfig()
    model = SparseLogisticRegression(lam=config.lam, tol=config.tol, max_iter=config.max_iter,
                                     feature_scales=config.feature_scales, **kwargs)
    return model.fit(dataset.X, dataset.y)
