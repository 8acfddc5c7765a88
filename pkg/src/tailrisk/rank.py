"""Ordinal robustness analysis: rank transform, rank OLS, concordance curves,
Rank Graduation Accuracy and its subsample significance machinery.

Ranks are cumulative-frequency ranks (the smallest level gets rank 1, the
next distinct level adds the previous level's multiplicity), which removes
the leverage of extreme losses.  Model accuracy is the squared-deviation
distance between the concordance curve (cumulative share of true ranks,
ordered by predicted rank) and the no-information bisector; model comparison
rescales the accuracy gap to a statistic whose reference law is the
symmetric variance gamma evaluated through its gamma-difference form.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from enum import Enum
from typing import Hashable, Sequence

import numpy as np
from scipy import stats

from .data import CovariateRow
from .dists import VarianceGammaParams, vg_critical_value
from .errors import DomainError, InsufficientDataError, RankDeficiencyError

__all__ = [
    "rank_transform",
    "RankedDataset",
    "make_ranked_dataset",
    "RankOlsFit",
    "fit_rank_ols",
    "rga",
    "concordance_curve",
    "vg_reference_params",
    "SignificanceClass",
    "RgaTestOutcome",
    "rga_significance_test",
    "joint_vs_separate_rank_test",
]


def rank_transform(y: Sequence[float]) -> np.ndarray:
    """Cumulative-frequency ranks: ``r_1 = 1``, ``r_z = n_{z-1} + r_{z-1}``.

    Equivalently, each observation's rank is one plus the number of strictly
    smaller observations; ties share their level's rank.
    """
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise InsufficientDataError("rank transform needs a nonempty sequence")
    order = np.argsort(y, kind="stable")
    sorted_y = y[order]
    ranks_sorted = np.empty(y.size)
    ranks_sorted[0] = 1.0
    for i in range(1, y.size):
        ranks_sorted[i] = ranks_sorted[i - 1] if sorted_y[i] == sorted_y[i - 1] else i + 1.0
    out = np.empty(y.size)
    out[order] = ranks_sorted
    return out


@dataclass(frozen=True)
class RankedDataset:
    ranks: np.ndarray
    design_names: tuple[str, ...]
    design: np.ndarray

    @property
    def mean_rank(self) -> float:
        return float(self.ranks.mean())

    @property
    def n_obs(self) -> int:
        return int(self.ranks.size)


def make_ranked_dataset(
    y: Sequence[float], rows: Sequence[CovariateRow], columns: Sequence[str]
) -> RankedDataset:
    """Rank-transform the response and assemble the design.

    An intercept is always first; ``columns`` may name dummies or ``"time"``.
    """
    if len(rows) != len(y):
        raise DomainError("responses and rows must be aligned")
    names = ("intercept",) + tuple(columns)
    cols = [np.ones(len(rows))]
    for c in columns:
        cols.append(np.array([r.value(c) for r in rows], dtype=float))
    return RankedDataset(ranks=rank_transform(y), design_names=names, design=np.column_stack(cols))


@dataclass(frozen=True)
class RankOlsFit:
    names: tuple[str, ...]
    coefficients: np.ndarray
    fitted: np.ndarray
    residual_variance: float
    standard_errors: np.ndarray

    @property
    def t_ratios(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.coefficients / self.standard_errors

    def predict(self, X: np.ndarray) -> np.ndarray:
        return X @ self.coefficients


def fit_rank_ols(ranked: RankedDataset) -> RankOlsFit:
    """Least squares of ranks on the design; the intercept absorbs the mean."""
    X, r = ranked.design, ranked.ranks
    n, p = X.shape
    if n <= p:
        raise InsufficientDataError(f"{n} observations cannot fit {p} columns")
    if np.linalg.matrix_rank(X) < p:
        raise RankDeficiencyError("rank design is column-rank deficient")
    beta, _, _, _ = np.linalg.lstsq(X, r, rcond=None)
    fitted = X @ beta
    resid = r - fitted
    s2 = float(resid @ resid) / (n - p)
    cov = s2 * np.linalg.inv(X.T @ X)
    return RankOlsFit(
        names=ranked.design_names,
        coefficients=beta,
        fitted=fitted,
        residual_variance=s2,
        standard_errors=np.sqrt(np.diag(cov)),
    )


def _ordered_cumulative_shares(ranks: np.ndarray, predicted: np.ndarray) -> np.ndarray:
    if ranks.size != predicted.size:
        raise DomainError("ranks and predictions must have equal length")
    # ties in the predictions are broken by original index (stable sort)
    order = np.argsort(predicted, kind="stable")
    cum = np.cumsum(ranks[order])
    return cum / (ranks.size * ranks.mean())


def rga(ranks: Sequence[float], predicted: Sequence[float]) -> float:
    """Rank Graduation Accuracy of predictions against true ranks.

    ``sum_i (n/i) * (C_i/(n rbar) - i/n)^2`` where ``C_i`` accumulates the
    true ranks reordered by ascending predicted rank.  Zero for a constant
    response; larger is farther from the no-information bisector.
    """
    ranks = np.asarray(ranks, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    shares = _ordered_cumulative_shares(ranks, predicted)
    n = ranks.size
    i = np.arange(1, n + 1)
    return float(np.sum((n / i) * (shares - i / n) ** 2))


def concordance_curve(ranks: Sequence[float], predicted: Sequence[float]) -> np.ndarray:
    """Pairs ``(i/n, cumulative rank share)`` ordered by predicted rank.

    The diagonal is the no-information reference; the last point is (1, 1).
    """
    ranks = np.asarray(ranks, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    shares = _ordered_cumulative_shares(ranks, predicted)
    n = ranks.size
    return np.column_stack([np.arange(1, n + 1) / n, shares])


def concordance_csv(curve: np.ndarray) -> str:
    buf = io.StringIO()
    buf.write("share_of_observations,cumulative_rank_share\n")
    for x, y in curve:
        buf.write(f"{x!r},{y!r}\n")
    return buf.getvalue()


def vg_reference_params(subsample_size: int) -> VarianceGammaParams:
    """Reference law for the accuracy-gap statistic on ``n`` observations:
    symmetric variance gamma with shape n/2 and rate 1/2."""
    if subsample_size < 1:
        raise DomainError("subsample size must be >= 1")
    return VarianceGammaParams(shape_lambda=subsample_size / 2.0, rate_alpha=0.5)


class SignificanceClass(Enum):
    NEVER = "Never significant"
    RARELY = "Rarely significant"
    SOMETIMES = "Sometimes significant"
    FREQUENTLY = "Frequently significant"
    ALMOST_ALWAYS = "Almost always significant"


def _classify_share(s: float) -> SignificanceClass:
    if s == 0.0:
        return SignificanceClass.NEVER
    if s <= 0.3:
        return SignificanceClass.RARELY
    if s <= 0.5:
        return SignificanceClass.SOMETIMES
    if s <= 0.7:
        return SignificanceClass.FREQUENTLY
    return SignificanceClass.ALMOST_ALWAYS


def _binomial_z(s_hat: float, p0: float, d: int) -> float:
    return (s_hat - p0) / math.sqrt(p0 * (1.0 - p0) / d)


def _holm_adjust(p_values: Sequence[float]) -> list[float]:
    order = np.argsort(p_values)
    m = len(p_values)
    adjusted = [0.0] * m
    running = 0.0
    for rank_idx, idx in enumerate(order):
        val = (m - rank_idx) * p_values[idx]
        running = max(running, min(val, 1.0))
        adjusted[idx] = running
    return adjusted


def _three_way_binomial(s_hat: float, d: int, alpha_s: float) -> tuple[str, float]:
    """The three-way decision on the subsample share.

    Outer bands run a single one-sided binomial z-test; the two middle bands
    run both boundary tests and combine them with Holm's step-down rule.
    Returns (conclusion, p-value), where the p-value is the decisive
    (Holm-adjusted, for middle bands) one.
    """
    if s_hat == 0.0:
        return "-", math.nan
    if s_hat > 0.7:
        p = float(stats.norm.sf(_binomial_z(s_hat, 0.7, d)))
        return ("p > 0.7" if p <= alpha_s else "p <= 0.7"), p
    if s_hat <= 0.3:
        p = float(stats.norm.cdf(_binomial_z(s_hat, 0.3, d)))
        return ("p <= 0.3" if p <= alpha_s else "p > 0.3"), p
    if s_hat <= 0.5:
        lo, hi = 0.3, 0.5
    else:
        lo, hi = 0.5, 0.7
    p_above = float(stats.norm.sf(_binomial_z(s_hat, lo, d)))   # H1: p > lo
    p_below = float(stats.norm.cdf(_binomial_z(s_hat, hi, d)))  # H1: p <= hi
    adj = _holm_adjust([p_above, p_below])
    reject_above = adj[0] <= alpha_s
    reject_below = adj[1] <= alpha_s
    if reject_above and reject_below:
        return f"p in ({lo}, {hi}]", max(adj)
    if reject_above:
        return f"p > {lo}", adj[0]
    if reject_below:
        return f"p <= {hi}", adj[1]
    return "inconclusive", min(adj)


@dataclass(frozen=True)
class RgaTestOutcome:
    rga_full: float
    rga_restricted: float
    t_statistic: float
    s_value: float
    s_class: SignificanceClass
    binomial_p: float
    binomial_result: str
    critical_value: float
    d: int
    subsample_size: int

    def to_csv_row(self, label: str) -> str:
        p = "-" if math.isnan(self.binomial_p) else repr(self.binomial_p)
        return (
            f"{label},{self.rga_restricted!r},{self.s_value!r},{p},"
            f"{self.binomial_result},{self.s_class.value}"
        )


def _ols_predict(ranks: np.ndarray, X: np.ndarray) -> np.ndarray:
    beta, _, _, _ = np.linalg.lstsq(X, ranks, rcond=None)
    return X @ beta


def rga_significance_test(
    y: Sequence[float],
    rows: Sequence[CovariateRow],
    full_columns: Sequence[str],
    restricted_columns: Sequence[str],
    d: int,
    subsample_size: int,
    alpha_s: float = 0.05,
    test_alpha: float = 0.05,
    seed: int = 0,
    refit: bool = True,
) -> RgaTestOutcome:
    """Subsample test of whether the full model's accuracy gain is real.

    On each of ``d`` seeded subsamples (without replacement, re-ranked within
    the subsample), both models are fitted (or, with ``refit=False``, the
    full-sample coefficients are reused), the accuracy gap is rescaled to
    ``T = n_sub * rbar * (RGA_full - RGA_restricted)`` and compared against
    the upper ``test_alpha/2`` critical value of the variance-gamma reference
    for the subsample size.  The share of exceedances is the s-value, which
    the three-way binomial procedure then classifies.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    if d < 1:
        raise DomainError("d must be >= 1")
    if subsample_size > n:
        raise InsufficientDataError("subsample larger than the data")
    full = make_ranked_dataset(y, rows, full_columns)
    restricted = make_ranked_dataset(y, rows, restricted_columns)
    min_needed = max(full.design.shape[1], restricted.design.shape[1]) + 1
    if refit and subsample_size < min_needed:
        raise InsufficientDataError(
            f"subsample size {subsample_size} cannot refit {min_needed - 1} columns; "
            "use refit=False to reuse full-sample coefficients"
        )
    full_fit = fit_rank_ols(full)
    restricted_fit = fit_rank_ols(restricted)
    rga_full = rga(full.ranks, full_fit.fitted)
    rga_restricted = rga(restricted.ranks, restricted_fit.fitted)
    t_full_sample = n * full.mean_rank * (rga_full - rga_restricted)

    crit = vg_critical_value(vg_reference_params(subsample_size), test_alpha / 2.0)
    rng = np.random.default_rng(seed)
    exceed = 0
    for _ in range(d):
        idx = rng.choice(n, size=subsample_size, replace=False)
        r_sub = rank_transform(y[idx])
        Xf, Xr = full.design[idx], restricted.design[idx]
        if refit:
            pred_f = _ols_predict(r_sub, Xf)
            pred_r = _ols_predict(r_sub, Xr)
        else:
            pred_f = Xf @ full_fit.coefficients
            pred_r = Xr @ restricted_fit.coefficients
        t_sub = subsample_size * r_sub.mean() * (rga(r_sub, pred_f) - rga(r_sub, pred_r))
        if t_sub >= crit:
            exceed += 1
    s_value = exceed / d
    result, p = _three_way_binomial(s_value, d, alpha_s)
    return RgaTestOutcome(
        rga_full=rga_full,
        rga_restricted=rga_restricted,
        t_statistic=t_full_sample,
        s_value=s_value,
        s_class=_classify_share(s_value),
        binomial_p=p,
        binomial_result=result,
        critical_value=crit,
        d=d,
        subsample_size=subsample_size,
    )


def joint_vs_separate_rank_test(
    y: Sequence[float],
    risk_types: Sequence[Hashable],
    rows: Sequence[CovariateRow],
    base_columns: Sequence[str],
    d: int,
    subsample_size: int,
    alpha_s: float = 0.05,
    test_alpha: float = 0.05,
    seed: int = 0,
) -> RgaTestOutcome:
    """Pooled-with-type-dummies model against per-type rank regressions.

    The separate model plays the full role (per-type coefficient vectors);
    the joint model is the restriction.  Full-sample coefficients are reused
    on the subsamples, since tiny subsamples cannot refit per-type designs.
    Reports the share of subsamples on which the models differ significantly.
    """
    y = np.asarray(y, dtype=float)
    levels = sorted(set(risk_types), key=str)
    if len(levels) < 2:
        raise DomainError("joint vs separate comparison needs at least 2 risk types")
    n = y.size
    type_arr = np.array([levels.index(rt) for rt in risk_types])

    # joint: pooled ranks, base columns plus type dummies (first is baseline)
    joint_rows = []
    for row, rt in zip(rows, risk_types):
        dmy = dict(row.dummies)
        for lv in levels[1:]:
            dmy[f"RT_{lv}"] = float(rt == lv)
        joint_rows.append(CovariateRow(row.time, dmy))
    joint_cols = tuple(base_columns) + tuple(f"RT_{lv}" for lv in levels[1:])
    joint = make_ranked_dataset(y, joint_rows, joint_cols)
    joint_fit = fit_rank_ols(joint)
    joint_pred_all = joint_fit.fitted

    # separate: per-type fits on the pooled ranks
    base = make_ranked_dataset(y, rows, base_columns)
    sep_pred_all = np.empty(n)
    for k, lv in enumerate(levels):
        mask = type_arr == k
        Xs = base.design[mask]
        if mask.sum() <= Xs.shape[1]:
            raise InsufficientDataError(f"risk type {lv!r} has too few observations")
        sep_pred_all[mask] = _ols_predict(base.ranks[mask], Xs)

    rga_sep = rga(base.ranks, sep_pred_all)
    rga_joint = rga(joint.ranks, joint_pred_all)
    t_full = n * base.mean_rank * (rga_sep - rga_joint)

    crit = vg_critical_value(vg_reference_params(subsample_size), test_alpha / 2.0)
    rng = np.random.default_rng(seed)
    exceed = 0
    for _ in range(d):
        idx = rng.choice(n, size=subsample_size, replace=False)
        r_sub = rank_transform(y[idx])
        t_sub = subsample_size * r_sub.mean() * (
            rga(r_sub, sep_pred_all[idx]) - rga(r_sub, joint_pred_all[idx])
        )
        if t_sub >= crit:
            exceed += 1
    s_value = exceed / d
    result, p = _three_way_binomial(s_value, d, alpha_s)
    return RgaTestOutcome(
        rga_full=rga_sep,
        rga_restricted=rga_joint,
        t_statistic=t_full,
        s_value=s_value,
        s_class=_classify_share(s_value),
        binomial_p=p,
        binomial_result=result,
        critical_value=crit,
        d=d,
        subsample_size=subsample_size,
    )
