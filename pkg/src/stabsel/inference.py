"""Group-level tests on a target experiment, with and without voxel screening.

Paired differences (condition A minus condition B, one row per subject) are
tested voxel by voxel with a one-sample t-test; p-values are two-sided and
computed from the regularized incomplete beta function. Detections are
counted under Bonferroni (FWER) and Benjamini-Hochberg (FDR) at level q,
with the number of tests equal to the size of the tested selection.
"""

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from ._validation import check_matrix, check_labels, child_rng
from .exceptions import ArgumentError, ShapeError

logger = logging.getLogger(__name__)

TINY = np.finfo(np.float64).tiny


def t_pvalue(t, df):
    """Two-sided Student-t p-value, floored at the smallest positive double."""
    t = np.asarray(t, dtype=np.float64)
    p = betainc(0.5 * df, 0.5, df / (df + t * t))
    return np.clip(p, TINY, 1.0)


def paired_t_map(diff):
    """One-sample t statistics and two-sided p-values per column of ``diff``.

    Constant columns get t = 0 and p = 1.
    """
    diff = check_matrix(diff, "diff")
    n = diff.shape[0]
    if n < 2:
        raise ArgumentError("paired t-test needs at least 2 rows")
    mean = diff.mean(axis=0)
    sd = diff.std(axis=0, ddof=1)
    flat = np.ptp(diff, axis=0) == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(flat, 0.0, mean / (sd / np.sqrt(n)))
    p = np.where(flat, 1.0, t_pvalue(t, n - 1))
    return t, p


def _check_q(q):
    if not 0.0 < q < 1.0:
        raise ArgumentError(f"q must lie in (0, 1), got {q}")


def bonferroni(p_values, q=0.05):
    _check_q(q)
    p = np.asarray(p_values, dtype=np.float64)
    if p.size == 0:
        return np.zeros(0, dtype=bool)
    return p <= q / p.size


def bh_fdr(p_values, q=0.05):
    """Benjamini-Hochberg step-up flags; tied p-values share one fate."""
    _check_q(q)
    p = np.asarray(p_values, dtype=np.float64)
    n = p.size
    if n == 0:
        return np.zeros(0, dtype=bool)
    ps = np.sort(p)
    ok = np.flatnonzero(ps <= q * np.arange(1, n + 1) / n)
    if ok.size == 0:
        return np.zeros(n, dtype=bool)
    return p <= ps[ok[-1]]


def anova_f(X, y):
    """Two-group one-way ANOVA F per column (equal to the pooled two-sample t squared).

    Columns with zero pooled variance get F = 0.
    """
    X = check_matrix(X)
    y = check_labels(y, X.shape[0])
    a, b = X[y > 0], X[y < 0]
    na, nb = a.shape[0], b.shape[0]
    if na + nb < 3:
        raise ArgumentError("ANOVA needs at least 3 samples")
    ss = ((a - a.mean(0)) ** 2).sum(0) + ((b - b.mean(0)) ** 2).sum(0)
    pooled = ss / (na + nb - 2)
    d = a.mean(0) - b.mean(0)
    with np.errstate(divide="ignore", invalid="ignore"):
        F = np.where(pooled > 0, d * d / (pooled * (1.0 / na + 1.0 / nb)), 0.0)
    return F, na + nb - 2


def anova_screen(dataset, n_keep=None, alpha=None):
    """Indices of the top ``n_keep`` features by F (ties to lower index) or all with p < alpha."""
    if (n_keep is None) == (alpha is None):
        raise ArgumentError("give exactly one of n_keep and alpha")
    F, df = anova_f(dataset.X, dataset.y)
    if alpha is not None:
        return np.flatnonzero(t_pvalue(np.sqrt(F), df) < alpha)
    n_keep = int(n_keep)
    if not 0 <= n_keep <= F.size:
        raise ArgumentError(f"n_keep must lie in [0, {F.size}]")
    order = np.lexsort((np.arange(F.size), -F))
    return np.sort(order[:n_keep])


def qq_series(p_values):
    """Pairs (-log10 expected, -log10 observed) in ascending p order, (i - 0.5)/n positions."""
    p = np.sort(np.asarray(p_values, dtype=np.float64))
    n = p.size
    if n == 0:
        raise ArgumentError("Q-Q series of an empty p-value set")
    expected = (np.arange(1, n + 1) - 0.5) / n
    return np.column_stack([-np.log10(expected), -np.log10(p)])


@dataclass(eq=False)
class InferenceReport:
    tested_indices: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    q: float
    label: str = ""
    fwer_flags: np.ndarray = field(init=False)
    fdr_flags: np.ndarray = field(init=False)

    def __post_init__(self):
        self.fwer_flags = bonferroni(self.p_values, self.q)
        self.fdr_flags = bh_fdr(self.p_values, self.q)

    @property
    def n_tested(self):
        return int(self.tested_indices.size)

    @property
    def empty(self):
        return self.n_tested == 0

    @property
    def n_detect_fwer(self):
        return int(self.fwer_flags.sum())

    @property
    def n_detect_fdr(self):
        return int(self.fdr_flags.sum())

    def detection_rate(self, kind="fdr"):
        if self.empty:
            return float("nan")
        n = self.n_detect_fdr if kind == "fdr" else self.n_detect_fwer
        return n / self.n_tested

    def qq_series(self):
        return qq_series(self.p_values) if not self.empty else np.zeros((0, 2))

    def summary(self):
        return {"label": self.label, "q": self.q, "n_tested": self.n_tested,
                "n_detect_fwer": self.n_detect_fwer, "n_detect_fdr": self.n_detect_fdr,
                "rate_fwer": _nan_to_none(self.detection_rate("fwer")),
                "rate_fdr": _nan_to_none(self.detection_rate("fdr"))}

    def write_stats_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["feature", "t", "p", "fwer", "fdr"])
            for row in zip(self.tested_indices, self.t_stats, self.p_values,
                           self.fwer_flags, self.fdr_flags):
                w.writerow([int(row[0]), repr(float(row[1])), repr(float(row[2])),
                            int(row[3]), int(row[4])])

    def write_qq_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["expected_neglog10", "observed_neglog10"])
            for e, o in self.qq_series():
                w.writerow([repr(float(e)), repr(float(o))])


def _nan_to_none(x):
    return None if x != x else x


def paired_differences(dataset):
    """Per-subject (+1 row) minus (-1 row), subjects in sorted id order."""
    if dataset.groups is None:
        raise ArgumentError("paired analysis needs subject ids (dataset.groups)")
    pos, neg = {}, {}
    for i, (g, lab) in enumerate(zip(dataset.groups, dataset.y)):
        book = pos if lab > 0 else neg
        if g in book:
            raise ArgumentError(f"subject {g!r} has two rows with label {int(lab)}")
        book[g] = i
    subjects = sorted(set(pos) & set(neg))
    if len(subjects) < 2:
        raise ArgumentError("fewer than 2 complete subject pairs")
    return (dataset.X[[pos[s] for s in subjects]] - dataset.X[[neg[s] for s in subjects]],
            subjects)


def draw_cohort(diff, n_star, seed):
    """Rows of ``n_star`` subjects drawn without replacement."""
    n_star = int(n_star)
    if n_star < 2:
        raise ArgumentError("n_star must be at least 2")
    if n_star > diff.shape[0]:
        raise ArgumentError(f"n_star={n_star} exceeds the {diff.shape[0]} available subjects")
    rows = np.sort(child_rng(seed, "cohort", n_star).choice(diff.shape[0], n_star, replace=False))
    return diff[rows]


def screened_inference(diff, selection, q=0.05, label=""):
    """t-tests on the columns of ``diff`` listed in ``selection``."""
    diff = check_matrix(diff, "diff")
    selection = np.unique(np.asarray(selection, dtype=np.int64))
    if selection.size and (selection[0] < 0 or selection[-1] >= diff.shape[1]):
        raise ShapeError("selection index out of range")
    if selection.size == 0:
        logger.warning("screened inference with an empty selection")
        empty = np.zeros(0)
        return InferenceReport(selection, empty, empty, q, label)
    cols = diff if selection.size == diff.shape[1] else diff[:, selection]
    t, p = paired_t_map(cols)
    return InferenceReport(selection, t, p, q, label)


ARMS = ("all", "selection", "anova")


def compare_arms(diff, selection, anova_selection, q=0.05):
    """Reports for full-brain, screened and ANOVA-screened analyses of one cohort."""
    p = diff.shape[1]
    return {"all": screened_inference(diff, np.arange(p), q, "all"),
            "selection": screened_inference(diff, selection, q, "selection"),
            "anova": screened_inference(diff, anova_selection, q, "anova")}


def _cell(report, kind):
    if report.empty:
        return "NA"
    n = report.n_detect_fdr if kind == "fdr" else report.n_detect_fwer
    return f"{n} ({100.0 * n / report.n_tested:.2f}%)"


TABLE2_HEADER = ["n_star"] + [f"{arm}_{kind}" for arm in ARMS for kind in ("fwer", "fdr")]


def write_table2(rows, path):
    """``rows`` maps n_star to the dict returned by :func:`compare_arms`."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE2_HEADER)
        for n_star in sorted(rows):
            reports = rows[n_star]
            w.writerow([n_star] + [_cell(reports[a], k) for a in ARMS for k in ("fwer", "fdr")])


def write_report_json(rows, path, extra=None):
    data = {"cohorts": {str(n): {a: r.summary() for a, r in reps.items()}
                        for n, reps in sorted(rows.items())}}
    if extra:
        data.update(extra)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
