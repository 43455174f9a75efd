import numpy as np
import pytest
from scipy import stats

from stabsel.exceptions import ArgumentError, ConfigError
from stabsel.synth import (ScannerModel, SynthConfig, block_parcellation, derive_target,
                           make_ground_truth, sample_dataset)
from stabsel.volume import adjacency, build_space


@pytest.fixture
def space():
    return build_space((9, 9, 6), (3.0, 3.0, 3.0))


def test_ground_truth_extremes(space):
    parcels = block_parcellation(space, 3)
    assert make_ground_truth(space, parcels, 0, 1.0, 0).k == 0
    full = make_ground_truth(space, parcels, parcels.n_parcels, 1.0, 0)
    assert full.k == space.p
    with pytest.raises(ArgumentError):
        make_ground_truth(space, parcels, parcels.n_parcels + 1, 1.0, 0)
    a = make_ground_truth(space, parcels, 3, 1.0, 7)
    assert np.array_equal(a.support, make_ground_truth(space, parcels, 3, 1.0, 7).support)


def test_derive_target_overlap():
    space = build_space((8, 8, 8))
    truth = make_ground_truth(space, block_parcellation(space, 2), 5, 1.0, 0)
    assert truth.k == 40
    assert np.array_equal(derive_target(truth, 1.0, 1.0, 1).support, truth.support)
    assert np.intersect1d(derive_target(truth, 0.0, 1.0, 1).support, truth.support).size == 0
    half = derive_target(truth, 0.5, 1.0, 1)
    assert half.k == 40
    assert np.intersect1d(half.support, truth.support).size == 20


def test_noise_free_difference_equals_effect(space):
    truth = make_ground_truth(space, block_parcellation(space), 2, 1.7, 0)
    d = sample_dataset(space, truth, ScannerModel(noise_sigma=0.0), 3, 0)
    diff = d.X[d.y > 0].mean(0) - d.X[d.y < 0].mean(0)
    assert np.allclose(diff[truth.support], 1.7)
    assert np.allclose(np.delete(diff, truth.support), 0.0)


def test_null_t_pvalues_uniform():
    space = build_space((6, 6, 5))
    truth = make_ground_truth(space, block_parcellation(space), 0, 0.0, 0)
    d = sample_dataset(space, truth, ScannerModel(), 200, 1)
    p = stats.ttest_ind(d.X[d.y > 0], d.X[d.y < 0]).pvalue
    assert stats.kstest(p, "uniform").pvalue > 0.01


def test_unsmoothed_noise_uncorrelated():
    space = build_space((4, 4, 4))
    truth = make_ground_truth(space, block_parcellation(space), 0, 0.0, 0)
    X = sample_dataset(space, truth, ScannerModel(), 250, 2).X
    r = np.corrcoef(X.T)
    assert np.max(np.abs(r[np.triu_indices(space.p, 1)])) < 0.25
    assert np.mean(np.abs(r[np.triu_indices(space.p, 1)])) < 0.1


def test_smoothing_raises_neighbor_correlation(space):
    truth = make_ground_truth(space, block_parcellation(space), 0, 0.0, 0)
    edges = adjacency(space).edges

    def neighbor_r(fwhm):
        X = sample_dataset(space, truth, ScannerModel(smooth_fwhm_mm=fwhm), 50, 3).X
        Z = (X - X.mean(0)) / X.std(0)
        return np.mean(np.sum(Z[:, edges[:, 0]] * Z[:, edges[:, 1]], 0) / X.shape[0])

    assert neighbor_r(8.0) > neighbor_r(0.0) + 0.3


def test_smoothed_noise_keeps_unit_variance(space):
    truth = make_ground_truth(space, block_parcellation(space), 0, 0.0, 0)
    X = sample_dataset(space, truth, ScannerModel(smooth_fwhm_mm=6.0), 200, 4).X
    # interior voxels are not attenuated by the zero padding
    c = space.flat_index((4, 4, 3))
    assert abs(X[:, c].std() - 1.0) < 0.15


def test_t_increases_with_effect(space):
    parcels = block_parcellation(space)
    means = []
    for eff in (0.2, 0.5, 1.0):
        truth = make_ground_truth(space, parcels, 3, eff, 0)
        d = sample_dataset(space, truth, ScannerModel(), 50, 5)
        t = stats.ttest_ind(d.X[d.y > 0], d.X[d.y < 0]).statistic
        means.append(t[truth.support].mean())
    assert means[0] < means[1] < means[2]


def test_determinism_and_pairing(space):
    cfg = SynthConfig.from_dict({"dims": [9, 9, 6], "n_per_class": 4, "effect_size": 1.0})
    a = cfg.generate(3)
    b = cfg.generate(3)
    assert np.array_equal(a[3].X, b[3].X) and np.array_equal(a[4].X, b[4].X)
    ref = a[3]
    assert list(ref.groups[:4]) == list(ref.groups[4:])
    assert ref.y.tolist() == [1] * 4 + [-1] * 4


def test_config_errors():
    with pytest.raises(ConfigError, match="effect_size"):
        SynthConfig.from_dict({"dims": [4, 4, 4], "n_per_class": 3})
    with pytest.raises(ConfigError, match="mask"):
        SynthConfig.from_dict({"dims": [4, 4, 4], "n_per_class": 3, "effect_size": 1,
                               "mask": "cube"})


def test_database_alternates_supports(space):
    cfg = SynthConfig.from_dict({"dims": [9, 9, 6], "n_per_class": 3, "effect_size": 1.0,
                                 "n_database": 3, "shared_fraction": 0.0})
    sp, rt, tt, _, _ = cfg.generate(0)
    db = cfg.generate_database(sp, rt, tt, 0)
    assert len(db) == 3 and all(d.n == 6 for d in db)
