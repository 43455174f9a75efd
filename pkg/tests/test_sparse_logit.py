import numpy as np
import pytest

from stabsel import _cd
from stabsel.exceptions import DegenerateLabels, NumericError
from stabsel.sparse_logit import (SparseLogisticRegression, kkt_violation, lambda_grid,
                                  lambda_max, logistic_loss, loss_gradient)


def problem(seed, n=60, p=15, k=3):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    w = np.zeros(p)
    w[:k] = 1.5
    y = np.where(X @ w + 0.5 * rng.standard_normal(n) > 0, 1, -1)
    if np.all(y == y[0]):
        y[0] = -y[0]
    return X, y


def central_difference(X, y, w, b, h=1e-6):
    f = lambda w_, b_: logistic_loss(X, y, w_, b_)  # noqa: E731
    g = np.empty_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = h
        g[j] = (f(w + e, b) - f(w - e, b)) / (2 * h)
    gb = (f(w, b + h) - f(w, b - h)) / (2 * h)
    return g, gb


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    X, y = problem(seed, p=10)
    rng = np.random.default_rng(seed)
    w, b = rng.standard_normal(10) * 0.3, 0.2
    g_fd, gb_fd = central_difference(X, y.astype(float), w, b)
    g, gb = loss_gradient(X, y, w, b)
    gk, gbk = _cd.gradient(np.asfortranarray(X), y.astype(float), w, b)
    for got, got_b in ((g, gb), (gk, gbk)):
        assert np.max(np.abs(got - g_fd)) / np.max(np.abs(g_fd)) < 1e-5
        assert abs(got_b - gb_fd) <= 1e-5 * max(1.0, abs(gb_fd))


@pytest.mark.parametrize("seed", range(5))
def test_kkt_at_convergence(seed):
    X, y = problem(seed)
    lm = SparseLogisticRegression(standardize=False).lambda_max(X, y)
    model = SparseLogisticRegression(0.2 * lm, standardize=False).fit(X, y)
    assert model.converged_
    assert kkt_violation(X, y, model.coef_, model.intercept_, model.lam) <= 10 * model.tol


def test_lambda_max_zeroes_weights():
    X, y = problem(0)
    est = SparseLogisticRegression(standardize=False)
    lm = est.lambda_max(X, y)
    assert np.count_nonzero(est.set_params(lam=1.01 * lm).fit(X, y).coef_) == 0
    assert np.count_nonzero(est.set_params(lam=0.5 * lm).fit(X, y).coef_) >= 1


def test_lambda_max_closed_form():
    y = np.array([1, 1, -1, -1, 1, -1])
    X = y[:, None].astype(float)
    assert lambda_max(X, y) == pytest.approx(len(y) / 2)
    assert lambda_max(np.zeros((6, 2)), y) == 0.0


def test_zero_column_stays_zero():
    X, y = problem(1)
    X[:, 4] = 0.0
    for lam in (0.1, 1.0, 5.0):
        assert SparseLogisticRegression(lam).fit(X, y).coef_[4] == 0.0


def test_decision_function_matches_training_scores():
    X, y = problem(2)
    m = SparseLogisticRegression(1.0).fit(X, y)
    assert np.max(np.abs(m.decision_function(X) - m.train_scores_)) < 1e-10


def test_predict_tie_and_simple_values():
    m = SparseLogisticRegression(standardize=False)
    m.coef_ = np.array([1.0, 0.0])
    m.intercept_ = 1.0
    m.mean_, m.scale_ = np.zeros(2), np.ones(2)
    assert m.decision_function(np.array([[3.0, 9.0]]))[0] == 4.0
    m.intercept_ = -3.0
    assert m.predict(np.array([[3.0, 0.0]]))[0] == 1


def test_feature_scales_equal_column_scaling():
    X, y = problem(3, p=12)
    s = np.where(np.arange(12) % 2 == 0, 0.5, 1.0)
    kw = dict(standardize=False, tol=1e-10, max_iter=20000)
    a = SparseLogisticRegression(2.0, feature_scales=s, **kw).fit(X, y)
    b = SparseLogisticRegression(2.0, **kw).fit(X * s, y)
    assert np.max(np.abs(a.coef_ - b.coef_ * s)) < 1e-8


def test_separable_noise_free_training_accuracy():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((80, 20))
    y = np.where(X[:, 0] + X[:, 1] > 0, 1, -1)
    m = SparseLogisticRegression(0.5).fit(X, y)
    assert np.mean(m.predict(X) == y) == 1.0


def test_one_dimensional_fit_matches_grid_search():
    rng = np.random.default_rng(5)
    x = rng.standard_normal(40)
    y = np.where(x + 0.8 * rng.standard_normal(40) > 0, 1, -1)
    X = x[:, None]
    m = SparseLogisticRegression(0.0, standardize=False, tol=1e-10, max_iter=100000).fit(X, y)
    ws = np.linspace(-5, 5, 1001)
    bs = np.linspace(-3, 3, 601)
    losses = np.array([[logistic_loss(X, y, np.array([w]), b) for b in bs[::10]] for w in ws[::10]])
    i, j = np.unravel_index(np.argmin(losses), losses.shape)
    # refine around the coarse optimum
    wf = np.linspace(ws[::10][i] - 0.1, ws[::10][i] + 0.1, 201)
    bf = np.linspace(bs[::10][j] - 0.1, bs[::10][j] + 0.1, 201)
    fine = np.array([[logistic_loss(X, y, np.array([w]), b) for b in bf] for w in wf])
    i, j = np.unravel_index(np.argmin(fine), fine.shape)
    assert abs(m.coef_[0] - wf[i]) < 2e-3 and abs(m.intercept_ - bf[j]) < 2e-3
    assert np.array_equal(m.predict(X), np.where(wf[i] * x + bf[j] >= 0, 1, -1))


def test_debug_mode_objective_monotone():
    X, y = problem(6)
    SparseLogisticRegression(0.5, debug=True).fit(X, y)


def test_sparsity_trend_over_seeds():
    counts = []
    for seed in range(20):
        X, y = problem(seed)
        est = SparseLogisticRegression(warm_start=True)
        grid = lambda_grid(est.lambda_max(X, y), 10, 0.05)
        counts.append([np.count_nonzero(est.set_params(lam=l).fit(X, y).coef_) for l in grid])
    mean = np.mean(counts, axis=0)
    assert np.all(np.diff(mean) >= 0)  # grid is descending


def test_input_errors():
    X, y = problem(0)
    with pytest.raises(DegenerateLabels):
        SparseLogisticRegression().fit(X, np.ones(len(y), int))
    X[0, 0] = np.nan
    with pytest.raises(NumericError):
        SparseLogisticRegression().fit(X, y)


def test_serialization_round_trip():
    X, y = problem(7)
    m = SparseLogisticRegression(1.0).fit(X, y)
    back = SparseLogisticRegression.from_dict(m.to_dict())
    assert np.array_equal(back.decision_function(X), m.decision_function(X))


def test_get_params_sklearn_style():
    from sklearn.base import clone
    m = SparseLogisticRegression(0.3, selection="random", random_state=1)
    assert clone(m).get_params() == m.get_params()
