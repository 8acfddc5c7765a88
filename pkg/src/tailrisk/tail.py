"""Non-parametric tail diagnostics and threshold selection.

The Hill estimator reads the tail index off the top-k log-spacings of the
order statistics; Kolmogorov-Smirnov testing and a lowest-passing-threshold
search drive the peaks-over-threshold preprocessing.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dists import GpdParams, fit_gpd_mle, gpd_cdf, gpd_sample
from .errors import DomainError, InsufficientDataError, TailRiskError

__all__ = [
    "HillCurve",
    "hill_estimate",
    "hill_curve",
    "KsResult",
    "ks_test",
    "ThresholdSelection",
    "select_threshold",
    "DEFAULT_THRESHOLD_GRID",
]


@dataclass(frozen=True)
class HillCurve:
    k_values: np.ndarray
    tau_hat: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("k,tau_hat\n")
        for k, t in zip(self.k_values, self.tau_hat):
            buf.write(f"{int(k)},{float(t)!r}\n")
        return buf.getvalue()

    def median(self) -> float:
        return float(np.median(self.tau_hat))


def _checked_positive(losses) -> np.ndarray:
    y = np.asarray(losses, dtype=float)
    if np.any(y <= 0.0):
        raise DomainError("Hill estimation requires strictly positive losses")
    return y


def hill_estimate(losses: Sequence[float], k: int) -> float:
    """Tail-index estimate from the top ``k`` order statistics.

    ``tau_hat = k / sum_{i<=k} log(y_(n-i+1) / y_(n-k))`` on the sorted sample.
    """
    y = _checked_positive(losses)
    n = y.size
    if n < 2:
        raise InsufficientDataError("need at least 2 observations")
    if not (1 <= k <= n - 1):
        raise DomainError(f"k must satisfy 1 <= k <= n-1 = {n - 1}, got {k}")
    y_sorted = np.sort(y)
    log_spacings = np.log(y_sorted[n - k:]) - math.log(y_sorted[n - k - 1])
    xi = float(np.mean(log_spacings))
    if xi <= 0.0:
        raise DomainError("degenerate top order statistics (all equal): Hill estimate undefined")
    return 1.0 / xi


def hill_curve(losses: Sequence[float], k_min: int, k_max: int) -> HillCurve:
    """Hill estimates over an inclusive ``k`` grid, for box-plot style summaries."""
    y = _checked_positive(losses)
    n = y.size
    if not (1 <= k_min <= k_max <= n - 1):
        raise DomainError(f"need 1 <= k_min <= k_max <= n-1, got [{k_min}, {k_max}] with n={n}")
    y_sorted = np.sort(y)
    logs = np.log(y_sorted)
    # cumulative sums of the top log-values let every k reuse one pass
    top_cumsum = np.cumsum(logs[::-1])
    ks = np.arange(k_min, k_max + 1)
    sums = top_cumsum[ks - 1] - ks * logs[n - 1 - ks]
    with np.errstate(divide="ignore"):
        tau = ks / sums
    if np.any(~np.isfinite(tau)) or np.any(tau <= 0.0):
        raise DomainError("degenerate order statistics in the requested k range")
    return HillCurve(k_values=ks, tau_hat=tau)


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    n_obs: int


def _kolmogorov_sf(x: float) -> float:
    # 2 * sum_{k>=1} (-1)^(k-1) exp(-2 k^2 x^2); below x=1 that alternating
    # series converges too slowly, so the dual theta-series for the cdf is
    # used there instead
    if x <= 0.0:
        return 1.0
    if x < 1.0:
        total = 0.0
        for k in range(1, 101):
            term = math.exp(-((2 * k - 1) ** 2) * math.pi**2 / (8.0 * x * x))
            total += term
            if term < 1e-18:
                break
        cdf = math.sqrt(2.0 * math.pi) / x * total
        return min(max(1.0 - cdf, 0.0), 1.0)
    total = 0.0
    for k in range(1, 101):
        term = math.exp(-2.0 * k * k * x * x)
        total += term if k % 2 else -term
        if term < 1e-16:
            break
    return min(max(2.0 * total, 0.0), 1.0)


def ks_test(sample: Sequence[float], cdf: Callable[[np.ndarray], np.ndarray]) -> KsResult:
    """Two-sided KS statistic against a fully specified cdf.

    The p-value uses the asymptotic Kolmogorov series evaluated at
    ``sqrt(n) * D``.
    """
    x = np.asarray(sample, dtype=float)
    if x.size == 0:
        raise InsufficientDataError("KS test needs a nonempty sample")
    n = x.size
    f = np.asarray(cdf(np.sort(x)), dtype=float)
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - f)
    d_minus = np.max(f - (i - 1) / n)
    d = float(max(d_plus, d_minus))
    return KsResult(statistic=d, p_value=_kolmogorov_sf(math.sqrt(n) * d), n_obs=n)


def _bootstrap_ks_pvalue(excess: np.ndarray, params: GpdParams, d_obs: float,
                         n_boot: int, seed: int) -> float:
    # parametric bootstrap: refit on each resample so the p-value accounts for
    # estimated parameters
    exceed = 0
    for b in range(n_boot):
        sample = gpd_sample(params, excess.size, seed=seed + b)
        sample = sample[sample > 0.0]
        if sample.size < 5:
            exceed += 1
            continue
        try:
            refit = fit_gpd_mle(sample)
            d_b = ks_test(sample, lambda y: gpd_cdf(y, refit.params)).statistic
        except TailRiskError:
            exceed += 1
            continue
        if d_b >= d_obs:
            exceed += 1
    return (1.0 + exceed) / (n_boot + 1.0)


DEFAULT_THRESHOLD_GRID: tuple[float, ...] = (0.0,) + tuple(
    round(0.50 + 0.05 * i, 2) for i in range(10)
)


@dataclass(frozen=True)
class CandidateResult:
    level: float
    threshold: float
    n_exceedances: int
    params: GpdParams | None
    ks_statistic: float
    p_value: float
    passed: bool
    note: str = ""


@dataclass(frozen=True)
class ThresholdSelection:
    found: bool
    level: float | None
    threshold: float | None
    n_exceedances: int
    params: GpdParams | None
    p_value: float | None
    alpha: float
    candidates: tuple[CandidateResult, ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("level,threshold,n_exceedances,ks_statistic,p_value,passed,note\n")
        for c in self.candidates:
            buf.write(
                f"{c.level!r},{c.threshold!r},{c.n_exceedances},"
                f"{c.ks_statistic!r},{c.p_value!r},{int(c.passed)},{c.note}\n"
            )
        return buf.getvalue()


def _evaluate_candidate(y: np.ndarray, level: float, alpha: float,
                        bootstrap: bool, n_boot: int, seed: int) -> CandidateResult:
    u = 0.0 if level <= 0.0 else float(np.quantile(y, level))
    excess = y[y > u] - u
    if excess.size < 5:
        return CandidateResult(level, u, int(excess.size), None, math.nan, 0.0,
                               False, "too few exceedances")
    try:
        fit = fit_gpd_mle(excess)
    except TailRiskError as exc:
        return CandidateResult(level, u, int(excess.size), None, math.nan, 0.0,
                               False, f"fit failed: {exc}")
    ks = ks_test(excess, lambda v: gpd_cdf(v, fit.params))
    p = ks.p_value
    if bootstrap:
        p = _bootstrap_ks_pvalue(excess, fit.params, ks.statistic, n_boot, seed)
    return CandidateResult(level, u, int(excess.size), fit.params, ks.statistic,
                           p, bool(p >= alpha))


def select_threshold(
    losses: Sequence[float],
    candidate_grid: Sequence[float] | None = None,
    alpha: float = 0.05,
    refine: bool = True,
    bootstrap: bool = False,
    n_boot: int = 199,
    seed: int = 0,
) -> ThresholdSelection:
    """Lowest candidate threshold whose exceedances pass the GPD KS test.

    Candidates are quantile levels (0 means no thresholding).  A passing
    coarse winner above the previous grid point triggers a 1%-step refinement
    scan so the reported threshold has fine percentile resolution.  The
    default plain-KS p-value ignores parameter estimation (anti-conservative);
    set ``bootstrap=True`` for a parametric-bootstrap p-value.
    """
    y = np.asarray(losses, dtype=float)
    if np.any(y <= 0.0):
        raise DomainError("threshold selection requires strictly positive losses")
    if not (0.0 < alpha <= 0.5):
        raise DomainError("alpha must lie in (0, 0.5]")
    grid = tuple(DEFAULT_THRESHOLD_GRID if candidate_grid is None else candidate_grid)
    if len(grid) == 0:
        raise DomainError("candidate grid must be nonempty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise DomainError("candidate grid must be sorted strictly ascending")
    if grid[0] < 0.0 or grid[-1] >= 1.0:
        raise DomainError("grid levels must lie in [0, 1)")

    results = [_evaluate_candidate(y, lv, alpha, bootstrap, n_boot, seed) for lv in grid]
    winner_idx = next((i for i, r in enumerate(results) if r.passed), None)

    if winner_idx is None:
        return ThresholdSelection(False, None, None, 0, None, None, alpha, tuple(results))

    winner = results[winner_idx]
    if refine and winner_idx > 0:
        lo_level = grid[winner_idx - 1]
        level = round(lo_level + 0.01, 10)
        while level < winner.level - 1e-12:
            cand = _evaluate_candidate(y, level, alpha, bootstrap, n_boot, seed)
            results.append(cand)
            if cand.passed:
                winner = cand
                break
            level = round(level + 0.01, 10)
    results.sort(key=lambda c: c.level)
    return ThresholdSelection(
        found=True,
        level=winner.level,
        threshold=winner.threshold,
        n_exceedances=winner.n_exceedances,
        params=winner.params,
        p_value=winner.p_value,
        alpha=alpha,
        candidates=tuple(results),
    )
