import csv
import itertools

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from stabsel.exceptions import ArgumentError
from stabsel.inference import (anova_f, anova_screen, bh_fdr, bonferroni, compare_arms,
                               paired_differences, paired_t_map, qq_series, screened_inference,
                               t_pvalue, write_table2)
from stabsel.volume import Dataset

# mpmath reference, 50 digits: t and two-sided p for differences (1, 2, 3, 4)
T_1234 = 3.8729833462074168852
P_1234 = 0.030466291662170991253


def mp_pvalue(t, df):
    mpmath.mp.dps = 40
    x = mpmath.mpf(df) / (df + mpmath.mpf(t) ** 2)
    return float(mpmath.betainc(mpmath.mpf(df) / 2, mpmath.mpf(1) / 2, 0, x, regularized=True))


def bh_oracle(p, q):
    """Largest threshold-closed subset whose max p-value passes |S| q / n."""
    n = len(p)
    best = set()
    for mask in itertools.product((0, 1), repeat=n):
        S = {i for i in range(n) if mask[i]}
        if not S:
            continue
        top = max(p[i] for i in S)
        if S != {i for i in range(n) if p[i] <= top}:
            continue
        if top <= len(S) * q / n and len(S) > len(best):
            best = S
    return best


def test_t_example():
    t, p = paired_t_map(np.array([[1.0], [2.0], [3.0], [4.0]]))
    assert t[0] == pytest.approx(T_1234, rel=1e-12)
    assert p[0] == pytest.approx(P_1234, abs=1e-6)


def test_t_zero_variance_and_symmetry():
    D = np.random.default_rng(0).standard_normal((8, 5))
    D[:, 2] = 0.0
    D[:, 3] = 0.3
    t, p = paired_t_map(D)
    assert p[2] == 1.0 and p[3] == 1.0
    tn, pn = paired_t_map(-D)
    assert np.array_equal(tn, -t) and np.array_equal(pn, p)
    with pytest.raises(ArgumentError):
        paired_t_map(D[:1])


@pytest.mark.parametrize("df", [5, 19, 39])
def test_pvalues_match_incomplete_beta_oracle(df):
    for t in np.linspace(-8, 8, 33):
        assert abs(float(t_pvalue(t, df)) - mp_pvalue(t, df)) < 1e-10


def test_bonferroni_cases():
    assert bonferroni([0.04], 0.05).tolist() == [True]
    assert bonferroni([0.04, 0.9], 0.05).tolist() == [False, False]
    assert bonferroni([0.025, 0.025], 0.05).tolist() == [True, True]


def test_bh_cases():
    assert bh_fdr([0.01, 0.02, 0.5], 0.05).tolist() == [True, True, False]
    assert not bh_fdr([1.0] * 5, 0.05).any()
    assert bh_fdr([0.04], 0.05).tolist() == [True]
    assert bh_fdr([0.03, 0.03, 0.03], 0.05).tolist() == [True] * 3
    with pytest.raises(ArgumentError):
        bh_fdr([0.1], 1.0)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.sampled_from([0.001, 0.004, 0.01, 0.02, 0.03, 0.05, 0.2, 0.6, 1.0])
                | st.floats(1e-6, 1.0), min_size=1, max_size=10),
       st.sampled_from([0.05, 0.1, 0.2]))
def test_bh_matches_oracle_and_dominates_bonferroni(p, q):
    flags = bh_fdr(p, q)
    assert set(np.flatnonzero(flags)) == bh_oracle(p, q)
    assert np.all(bonferroni(p, q) <= flags)


def test_anova_f_is_squared_pooled_t():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((30, 6))
    y = np.array([1] * 13 + [-1] * 17)
    F, df = anova_f(X, y)
    t = stats.ttest_ind(X[y > 0], X[y < 0]).statistic
    assert np.max(np.abs(F - t ** 2)) < 1e-10 and df == 28
    F_ref = stats.f_oneway(X[y > 0], X[y < 0]).statistic
    assert np.allclose(F, F_ref, rtol=1e-10)


def test_anova_screen():
    X = np.tile(np.arange(5.0), (6, 1))
    y = np.array([1, 1, 1, -1, -1, -1])
    d = Dataset(X, y)
    assert np.all(anova_f(X, y)[0] == 0)
    assert anova_screen(d, n_keep=5).tolist() == list(range(5))
    X = np.random.default_rng(2).standard_normal((6, 5))
    X[:3, 3] += 10
    assert anova_screen(Dataset(X, y), n_keep=1).tolist() == [3]
    assert 3 in anova_screen(Dataset(X, y), alpha=0.01)


def test_qq_series():
    n = 8
    p = (np.arange(1, n + 1) - 0.5) / n
    s = qq_series(p[::-1])
    assert np.allclose(s[:, 0], s[:, 1])
    assert np.all(np.diff(s[:, 0]) < 0)
    one = qq_series([0.1])
    assert one.tolist() == [[-np.log10(0.5), 1.0]]
    with pytest.raises(ArgumentError):
        qq_series([])


def test_screened_inference_and_table(tmp_path):
    rng = np.random.default_rng(3)
    D = rng.standard_normal((12, 50))
    D[:, :5] += 2.0
    full = screened_inference(D, np.arange(50))
    t, p = paired_t_map(D)
    assert np.array_equal(full.p_values, p)
    sel = screened_inference(D, np.arange(10))
    assert sel.n_detect_fwer >= full.n_detect_fwer
    empty = screened_inference(D, [])
    assert empty.empty and np.isnan(empty.detection_rate())
    rows = {10: compare_arms(D, np.arange(10), np.array([], int))}
    write_table2(rows, tmp_path / "t2.csv")
    lines = list(csv.reader(open(tmp_path / "t2.csv")))
    assert lines[0][0] == "n_star" and lines[1][-1] == "NA"


def test_paired_differences():
    X = np.arange(12.0).reshape(4, 3)
    d = Dataset(X, [1, -1, 1, -1], groups=["b", "b", "a", "a"])
    diff, subjects = paired_differences(d)
    assert subjects == ["a", "b"]
    assert np.array_equal(diff, np.array([X[2] - X[3], X[0] - X[1]]))
