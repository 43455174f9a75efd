import json

import numpy as np
import pytest

from stabsel.exceptions import ArgumentError
from stabsel.stability import (RandomizedLogisticRegression, SelectionProfile, k_max_heuristic,
                               max_recoverable_group, select, stratified_subsample)
from stabsel.volume import Dataset
from stabsel.stability import run_stability


def duplicated(seed, k=4, n_noise=16, n=100):
    rng = np.random.default_rng(seed)
    signal = rng.standard_normal(n)
    y = np.where(signal + 0.3 * rng.standard_normal(n) > 0, 1, -1)
    X = np.column_stack([np.tile(signal[:, None], (1, k)), rng.standard_normal((n, n_noise))])
    return X, y


def test_heuristics():
    assert k_max_heuristic(70, 40000) == 7
    assert k_max_heuristic(100, int(round(np.exp(10)))) == 10
    assert max_recoverable_group(0.01) == 100
    assert max_recoverable_group(0.5) == 2
    assert max_recoverable_group(1.0) == 1
    with pytest.raises(ArgumentError):
        max_recoverable_group(0.0)


def test_select_rules():
    prof = SelectionProfile(np.array([0.005, 0.01, 0.5]), 200)
    assert select(prof, 0.01).tolist() == [1, 2]
    assert select(prof, 0.0).tolist() == [0, 1, 2]
    assert select(prof, 1.0).tolist() == []
    freqs = np.random.default_rng(0).random(50)
    prof = SelectionProfile(freqs, 10)
    for t1, t2 in ((0.1, 0.3), (0.0, 0.9), (0.5, 0.5)):
        assert set(select(prof, t2)) <= set(select(prof, t1))


def test_stratified_subsample():
    y = np.array([1] * 30 + [-1] * 10)
    rows = stratified_subsample(y, 0.5, np.random.default_rng(0))
    assert rows.size == 20
    assert np.count_nonzero(y[rows] > 0) == 15
    assert np.unique(rows).size == rows.size


def test_strong_features_recovered():
    # class-shifted (non-separable) strong features, seed 0
    rng = np.random.default_rng(0)
    y = np.repeat([1, -1], 50)
    X = rng.standard_normal((100, 100))
    X[:, :5] += 1.0 * y[:, None]
    est = RandomizedLogisticRegression(50, random_state=0).fit(X, y)
    assert np.all(est.frequencies_[:5] >= 0.8)
    assert np.median(est.frequencies_[5:]) <= 0.1


def test_zero_feature_never_selected():
    X, y = duplicated(0)
    X[:, -1] = 0.0
    est = RandomizedLogisticRegression(30, random_state=0).fit(X, y)
    assert est.frequencies_[-1] == 0.0


def test_frequencies_are_multiples_of_one_over_m():
    X, y = duplicated(1)
    est = RandomizedLogisticRegression(37, random_state=3).fit(X, y)
    assert np.allclose(est.frequencies_ * 37, np.round(est.frequencies_ * 37))
    assert np.array_equal(est.counts_, np.rint(est.frequencies_ * 37))


def test_worker_count_does_not_change_output():
    X, y = duplicated(2)
    a = RandomizedLogisticRegression(40, random_state=5, n_jobs=1).fit(X, y)
    b = RandomizedLogisticRegression(40, random_state=5, n_jobs=2).fit(X, y)
    assert np.array_equal(a.counts_, b.counts_)


def test_selector_api_and_profile_json():
    X, y = duplicated(3)
    est = RandomizedLogisticRegression(20, tau=0.2, random_state=0).fit(X, y)
    assert est.transform(X).shape[1] == int(np.sum(est.frequencies_ >= 0.2))
    prof = est.profile()
    back = SelectionProfile.from_json(prof.to_json())
    assert np.array_equal(back.frequencies, prof.frequencies) and back.m == 20
    assert json.loads(prof.to_json())["config"]["n_iter"] == 20
    prof2 = run_stability(Dataset(X, y), n_iter=20, tau=0.2, random_state=0)
    assert np.array_equal(prof2.frequencies, prof.frequencies)


@pytest.mark.slow
def test_group_members_rarely_fall_below_half_share():
    # with tau = 1/(2k), a duplicated group member should almost never be missed at m=400
    k, below = 4, 0
    for rep in range(100):
        X, y = duplicated(1000 + rep, k=k, n_noise=8)
        est = RandomizedLogisticRegression(400, lam_ratio=0.9, random_state=rep).fit(X, y)
        below += np.any(est.frequencies_[:k] < 1 / (2 * k))
    assert below / 100 < 0.05
