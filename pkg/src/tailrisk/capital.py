"""Capital requirements for compound heavy-tailed losses.

The closed-form route approximates the high quantile of an annual aggregate
``Z = sum_{i<=N} (u + Y_i)`` by the single-loss quantile with a second-order
gamma-function correction; the simulation route draws the compound sum
directly (hot loop in the compiled kernels) and reads off the empirical
quantile with an order-statistics bootstrap standard error.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._kernels import pot_compound_sums
from .dists import GpdParams, gpd_quantile, real_gamma
from .errors import DomainError, GammaPoleError

__all__ = [
    "SlaInputs",
    "SlaResult",
    "sla_var",
    "sla_correction_constant",
    "PointMass",
    "McVarResult",
    "mc_var",
    "exact_pointmass_compound_var",
    "var_trajectory_csv",
]


def _is_nonpositive_integer(x: float, tol: float = 1e-12) -> bool:
    return x <= tol and abs(x - round(x)) < tol


@dataclass(frozen=True)
class SlaInputs:
    """Confidence level, annual intensity, severity parameters and threshold."""

    alpha: float
    lambda_hat: float
    gpd: GpdParams
    threshold_u: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise DomainError("alpha must lie in (0, 1)")
        if self.lambda_hat <= 0.0:
            raise DomainError("the annual intensity must be positive")
        if self.threshold_u < 0.0:
            raise DomainError("threshold must be >= 0")
        p = 1.0 - (1.0 - self.alpha) / self.lambda_hat
        if not (0.0 < p < 1.0):
            raise DomainError(
                f"quantile argument 1-(1-alpha)/lambda = {p:g} is outside (0, 1)"
            )


def sla_correction_constant(tau: float) -> float:
    """``c(tau) = (1-tau) Gamma(1-tau)^2 / (2 Gamma(1-2 tau))``.

    A pole of the denominator gamma alone is a removable zero (the reciprocal
    gamma vanishes there), so half-odd-integer tail indices give ``c = 0``.
    Poles of the numerator gamma (integer ``tau >= 1``) have no finite limit
    and raise.
    """
    num_arg = 1.0 - tau
    den_arg = 1.0 - 2.0 * tau
    if _is_nonpositive_integer(num_arg):
        raise GammaPoleError(f"gamma(1 - tau) has a pole at tau = {tau:g}")
    if _is_nonpositive_integer(den_arg):
        return 0.0
    return 0.5 * (1.0 - tau) * real_gamma(num_arg) ** 2 / real_gamma(den_arg)


@dataclass(frozen=True)
class SlaResult:
    value: float
    correction_applied: bool
    correction_constant: float | None


def sla_var(inputs: SlaInputs, allow_uncorrected: bool = False) -> SlaResult:
    """Single-loss approximation of the aggregate ``alpha``-quantile.

    ``u + Q(1 - (1-alpha)/lambda) * (1 - (1-alpha) c(tau) / (1-tau))`` with the
    severity quantile ``Q``.  Where ``c(tau)`` hits a gamma pole (or the
    ``1 - tau`` divisor vanishes), the correction is undefined; pass
    ``allow_uncorrected=True`` to fall back to the first-order value, flagged
    by ``correction_applied=False``.
    """
    tau = inputs.gpd.tail_tau
    p = 1.0 - (1.0 - inputs.alpha) / inputs.lambda_hat
    base = gpd_quantile(p, inputs.gpd)
    try:
        if abs(1.0 - tau) < 1e-12:
            raise GammaPoleError("correction divides by 1 - tau = 0")
        c = sla_correction_constant(tau)
    except GammaPoleError:
        if not allow_uncorrected:
            raise
        return SlaResult(value=inputs.threshold_u + base, correction_applied=False,
                         correction_constant=None)
    factor = 1.0 - (1.0 - inputs.alpha) * c / (1.0 - tau)
    return SlaResult(value=inputs.threshold_u + base * factor, correction_applied=True,
                     correction_constant=c)


@dataclass(frozen=True)
class PointMass:
    """Degenerate severity for oracle tests."""

    value: float

    def __post_init__(self):
        if self.value < 0.0:
            raise DomainError("point mass must be >= 0")


Severity = GpdParams | PointMass | Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class McVarResult:
    value: float
    standard_error: float
    n_sims: int


def _empirical_quantile_index(alpha: float, n: int) -> int:
    # inverse-cdf convention: smallest order statistic with cdf >= alpha
    return max(int(math.ceil(alpha * n)) - 1, 0)


def mc_var(
    alpha: float,
    lambda_hat: float,
    severity: Severity,
    threshold_u: float,
    n_sims: int,
    seed: int,
    batch_size: int = 2_000_000,
    n_boot: int = 200,
) -> McVarResult:
    """Empirical ``alpha``-quantile of the simulated compound annual loss.

    Each event contributes ``threshold_u`` plus a severity draw.  The
    standard error comes from the order-statistics bootstrap: quantile
    order indices are resampled binomially, which avoids resampling the
    simulations themselves.
    """
    if not (0.0 < alpha < 1.0):
        raise DomainError("alpha must lie in (0, 1)")
    if lambda_hat < 0.0:
        raise DomainError("intensity must be >= 0")
    if n_sims < 1_000:
        raise DomainError("n_sims must be at least 1000")
    rng = np.random.default_rng(seed)
    totals = np.empty(n_sims)
    done = 0
    while done < n_sims:
        b = min(batch_size, n_sims - done)
        counts = rng.poisson(lambda_hat, size=b).astype(np.int64)
        total_events = int(counts.sum())
        if isinstance(severity, GpdParams):
            u01 = rng.random(total_events)
            totals[done:done + b] = pot_compound_sums(
                u01, counts, severity.scale_mu, severity.tail_tau, threshold_u
            )
        elif isinstance(severity, PointMass):
            totals[done:done + b] = counts * (threshold_u + severity.value)
        else:
            draws = threshold_u + np.asarray(severity(rng, total_events), dtype=float)
            offsets = np.zeros(b, dtype=np.int64)
            np.cumsum(counts[:-1], out=offsets[1:])
            sums = np.add.reduceat(np.concatenate([draws, [0.0]]), offsets)
            sums[counts == 0] = 0.0
            totals[done:done + b] = sums
        done += b
    totals.sort()
    k = _empirical_quantile_index(alpha, n_sims)
    value = float(totals[k])
    boot_idx = np.clip(rng.binomial(n_sims, alpha, size=n_boot) - 1, 0, n_sims - 1)
    se = float(np.std(totals[boot_idx], ddof=1))
    return McVarResult(value=value, standard_error=se, n_sims=n_sims)


def exact_pointmass_compound_var(
    alpha: float, lambda_hat: float, severity_value: float, threshold_u: float = 0.0
) -> float:
    """Exact quantile of ``(u + c) * N`` by direct Poisson cdf summation."""
    if lambda_hat == 0.0:
        return 0.0
    step = threshold_u + severity_value
    cdf = 0.0
    pn = math.exp(-lambda_hat)
    for n in range(0, 100_000):
        if n > 0:
            pn *= lambda_hat / n
        cdf += pn
        if cdf >= alpha:
            return step * n
    raise DomainError("Poisson cdf summation failed to reach alpha")


def var_trajectory_csv(years: Sequence[int], values: Sequence[float]) -> str:
    """Trajectory serialization: year against log-VaR."""
    buf = io.StringIO()
    buf.write("year,log_var\n")
    for year, v in zip(years, values):
        buf.write(f"{year},{math.log(v)!r}\n")
    return buf.getvalue()
