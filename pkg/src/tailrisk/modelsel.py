"""Model comparison: joint vs per-category severity models and the
severity-family goodness-of-fit tables.

The closeness test works on the variance of per-observation log-likelihood
ratios: if two fitted models are equally close to the data-generating
process, that variance is near zero; ``n * var(llr)`` is referred to a
chi-square whose degrees of freedom default to the larger model's parameter
count.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np
from scipy import stats

from .data import CovariateRow
from .dists import FamilyTag, family_cdf, fit_family_mle
from .errors import DomainError, InsufficientDataError, TailRiskError
from .gamlss import LinkModelSpec, RegressionFit, fit_gpd_regression, predict_parameters
from .tail import ThresholdSelection, ks_test, select_threshold

__all__ = [
    "fit_joint_model",
    "fit_decoupled_models",
    "VuongResult",
    "vuong_variance_test",
    "family_comparison_table",
    "ComparisonRow",
]


def _risk_dummy_columns(risk_types: Sequence[Hashable]) -> tuple[list[Hashable], list[str]]:
    levels = sorted(set(risk_types), key=str)
    if len(levels) < 2:
        raise DomainError("joint model needs at least 2 risk types")
    # first level is the baseline; the rest get indicator columns
    return levels, [f"RT_{level}" for level in levels[1:]]


def _augment_rows(rows: Sequence[CovariateRow], risk_types, levels) -> list[CovariateRow]:
    out = []
    for row, rt in zip(rows, risk_types):
        d = dict(row.dummies)
        for level in levels[1:]:
            d[f"RT_{level}"] = float(rt == level)
        out.append(CovariateRow(row.time, d))
    return out


def fit_joint_model(
    losses: Sequence[float],
    risk_types: Sequence[Hashable],
    rows: Sequence[CovariateRow],
    base_columns: Sequence[str] = (),
    time_effect: str = "linear",
    threshold_grid: Sequence[float] | None = None,
    alpha: float = 0.05,
) -> tuple[RegressionFit, ThresholdSelection]:
    """Pooled severity regression with risk-type indicators in both links.

    The threshold is selected on the pooled losses; exceedances keep their
    covariates, augmented with risk-type dummies (first category is the
    baseline).
    """
    y = np.asarray(losses, dtype=float)
    if len(risk_types) != y.size or len(rows) != y.size:
        raise DomainError("losses, risk_types and rows must be aligned")
    levels, rt_cols = _risk_dummy_columns(risk_types)
    selection = select_threshold(y, candidate_grid=threshold_grid, alpha=alpha)
    if not selection.found:
        raise InsufficientDataError("no pooled threshold passed the goodness-of-fit gate")
    u = float(selection.threshold)
    keep = y > u
    excess = y[keep] - u
    kept_rows = _augment_rows(
        [r for r, k in zip(rows, keep) if k],
        [rt for rt, k in zip(risk_types, keep) if k],
        levels,
    )
    spec = LinkModelSpec(
        response="severity",
        family="gpd",
        design_columns=tuple(base_columns) + tuple(rt_cols),
        time_effect=time_effect,
        threshold_u=u,
    )
    return fit_gpd_regression(excess, kept_rows, spec), selection


def fit_decoupled_models(
    losses: Sequence[float],
    risk_types: Sequence[Hashable],
    rows: Sequence[CovariateRow],
    base_columns: Sequence[str] = (),
    time_effect: str = "linear",
    threshold_u: float = 0.0,
) -> dict[Hashable, RegressionFit]:
    """One severity regression per risk type over a common threshold."""
    y = np.asarray(losses, dtype=float)
    fits: dict[Hashable, RegressionFit] = {}
    for level in sorted(set(risk_types), key=str):
        mask = np.array([rt == level for rt in risk_types])
        excess = y[mask] - threshold_u
        if np.any(excess <= 0.0):
            raise DomainError("losses must exceed the common threshold")
        sub_rows = [r for r, m in zip(rows, mask) if m]
        spec = LinkModelSpec(
            response="severity",
            family="gpd",
            design_columns=tuple(base_columns),
            time_effect=time_effect,
            threshold_u=threshold_u,
        )
        fits[level] = fit_gpd_regression(excess, sub_rows, spec)
    return fits


@dataclass(frozen=True)
class VuongResult:
    statistic: float
    dof: int
    p_value: float
    per_observation_llr: np.ndarray

    def reject(self, level: float = 0.05) -> bool:
        return self.p_value < level


def _gpd_logpdf_at(fit: RegressionFit, y: np.ndarray, rows: Sequence[CovariateRow]) -> np.ndarray:
    out = np.empty(y.size)
    for i, (yi, row) in enumerate(zip(y, rows)):
        pred = predict_parameters(fit, row)
        mu, tau = pred["mu"], pred["tau"]
        out[i] = math.log(tau) - math.log(mu) - (1.0 + tau) * math.log1p(yi / mu)
    return out


def vuong_variance_test(
    joint_fit: RegressionFit,
    decoupled_fits: Mapping[Hashable, RegressionFit],
    excesses: Sequence[float],
    risk_types: Sequence[Hashable],
    joint_rows: Sequence[CovariateRow],
    decoupled_rows: Sequence[CovariateRow] | None = None,
    dof: int | None = None,
) -> VuongResult:
    """Variance-of-log-likelihood-ratio test of joint vs per-type models.

    ``llr_i = log g(y_i; joint) - log g(y_i; decoupled-for-its-type)``;
    the statistic is ``n * var(llr)`` (sample variance), referred to a
    chi-square with ``dof`` degrees of freedom (default: the larger model's
    parameter count).  Identical densities give statistic 0, p-value 1.
    """
    y = np.asarray(excesses, dtype=float)
    if len(risk_types) != y.size or len(joint_rows) != y.size:
        raise DomainError("both models must score the identical observation set")
    if decoupled_rows is None:
        decoupled_rows = joint_rows
    ll_joint = _gpd_logpdf_at(joint_fit, y, joint_rows)
    ll_dec = np.empty(y.size)
    for level, fit in decoupled_fits.items():
        mask = np.array([rt == level for rt in risk_types])
        if not mask.any():
            continue
        sub_rows = [r for r, m in zip(decoupled_rows, mask) if m]
        ll_dec[mask] = _gpd_logpdf_at(fit, y[mask], sub_rows)
    covered = set(risk_types) <= set(decoupled_fits)
    if not covered:
        raise DomainError("decoupled fits do not cover every observed risk type")
    llr = ll_joint - ll_dec
    n = y.size
    statistic = float(n * np.var(llr, ddof=1)) if n > 1 else 0.0
    if dof is None:
        n_joint = joint_fit.n_parameters
        n_dec = sum(f.n_parameters for f in decoupled_fits.values())
        dof = max(n_joint, n_dec)
    p = float(stats.chi2.sf(statistic, dof)) if statistic > 0.0 else 1.0
    return VuongResult(statistic=statistic, dof=int(dof), p_value=p, per_observation_llr=llr)


@dataclass(frozen=True)
class ComparisonRow:
    group: str
    family: str
    n_obs: int
    log_likelihood: float
    aic: float
    ks_p_value: float
    error: str = ""


def family_comparison_table(
    losses: Sequence[float],
    families: Sequence[FamilyTag | str],
    risk_types: Sequence[Hashable] | None = None,
) -> list[ComparisonRow]:
    """Fit each family and report log-likelihood, AIC and the KS p-value.

    With ``risk_types`` given, the same columns are additionally produced per
    risk type.  Per-cell failures are recorded in the row, not raised.
    """
    if len(families) == 0:
        raise DomainError("at least one family is required")
    y = np.asarray(losses, dtype=float)
    groups: list[tuple[str, np.ndarray]] = [("all", y)]
    if risk_types is not None:
        if len(risk_types) != y.size:
            raise DomainError("risk_types must align with losses")
        for level in sorted(set(risk_types), key=str):
            mask = np.array([rt == level for rt in risk_types])
            groups.append((str(level), y[mask]))

    rows: list[ComparisonRow] = []
    for gname, gy in groups:
        for fam in families:
            tag = FamilyTag(fam)
            if gy.size < 5:
                rows.append(ComparisonRow(gname, tag.value, int(gy.size),
                                          math.nan, math.nan, math.nan,
                                          "fewer than 5 observations"))
                continue
            try:
                fit = fit_family_mle(gy, tag)
                if fit.degenerate:
                    rows.append(ComparisonRow(gname, tag.value, int(gy.size),
                                              math.nan, math.nan, math.nan,
                                              "degenerate fit"))
                    continue
                ks = ks_test(gy, lambda v: family_cdf(fit.family, v))
                rows.append(ComparisonRow(gname, tag.value, int(gy.size),
                                          fit.log_likelihood, fit.aic, ks.p_value))
            except TailRiskError as exc:
                rows.append(ComparisonRow(gname, tag.value, int(gy.size),
                                          math.nan, math.nan, math.nan, str(exc)))
    return rows


def comparison_table_csv(rows: Sequence[ComparisonRow]) -> str:
    buf = io.StringIO()
    buf.write("group,family,n_obs,log_likelihood,aic,ks_p_value,error\n")
    for r in rows:
        buf.write(
            f"{r.group},{r.family},{r.n_obs},{r.log_likelihood!r},{r.aic!r},"
            f"{r.ks_p_value!r},{r.error}\n"
        )
    return buf.getvalue()
