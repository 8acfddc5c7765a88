"""Insurability analysis: zero-utility premiums, pool sizes and relative
wealth, by seeded simulation plus root finding.

A fixed loss panel (compound totals and per-event-capped covered totals) is
drawn once per case and seed and shared across every expected-utility
evaluation, so the indifference equations are deterministic functions of the
premium and bisection is well posed.  Utilities are floored at wealth 1,
which keeps both sides of the buyer's equation finite even for infinite-mean
severities.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ._kernels import pot_compound_capped_sums
from .capital import PointMass
from .data import CovariateRow
from .dists import GpdParams
from .errors import DomainError
from .gamlss import RegressionFit, predict_parameters

__all__ = [
    "UtilitySpec",
    "utility_eval",
    "InsuranceCase",
    "LossPanel",
    "build_panel",
    "PremiumSolveResult",
    "premium_max",
    "premium_min",
    "PoolSizeResult",
    "pool_size",
    "relative_wealth",
    "PremiumResult",
    "YearPremiums",
    "premium_timeseries",
    "premium_series_csv",
]


@dataclass(frozen=True)
class UtilitySpec:
    """Log utility or constant-relative-risk-aversion with exponent in [0, 1).

    Both are applied through the wealth floor ``u(x) = u~(max(x, 1))``.
    """

    kind: str  # "log" | "crra"
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in ("log", "crra"):
            raise DomainError(f"unknown utility kind {self.kind!r}")
        if self.kind == "crra":
            if self.gamma is None or not (0.0 <= self.gamma < 1.0):
                raise DomainError("crra gamma must lie in [0, 1)")
        elif self.gamma is not None:
            raise DomainError("log utility takes no gamma")

    @property
    def label(self) -> str:
        return "log" if self.kind == "log" else f"crra_{self.gamma:g}"


def utility_eval(spec: UtilitySpec, x) -> np.ndarray | float:
    """Floored utility: ``ln(max(x,1))`` or ``max(x,1)^(1-gamma) / (1-gamma)``."""
    floored = np.maximum(np.asarray(x, dtype=float), 1.0)
    if spec.kind == "log":
        out = np.log(floored)
    else:
        g = spec.gamma
        out = floored ** (1.0 - g) / (1.0 - g)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class InsuranceCase:
    """One insured firm-year: wealth, per-event cover cap, loss process."""

    wealth_w: float
    cover_fraction_k: float
    lam: float
    severity: GpdParams | PointMass
    threshold_u: float = 0.0

    def __post_init__(self):
        if self.wealth_w <= 0.0:
            raise DomainError("wealth must be positive")
        if not (0.0 < self.cover_fraction_k <= 1.0):
            raise DomainError("cover fraction must lie in (0, 1]")
        if self.lam < 0.0:
            raise DomainError("intensity must be >= 0")
        if self.threshold_u < 0.0:
            raise DomainError("threshold must be >= 0")

    @property
    def cover_cap(self) -> float:
        return self.cover_fraction_k * self.wealth_w


@dataclass(frozen=True)
class LossPanel:
    """Fixed simulation panel: total and covered compound losses per path."""

    totals: np.ndarray
    covered: np.ndarray
    n_sims: int

    def batches(self, n: int) -> list["LossPanel"]:
        cuts = np.array_split(np.arange(self.n_sims), n)
        return [LossPanel(self.totals[c], self.covered[c], c.size) for c in cuts]


def build_panel(case: InsuranceCase, n_sims: int, seed: int,
                batch_size: int = 2_000_000) -> LossPanel:
    """Draw the common-random-number panel for one case and seed."""
    if n_sims < 1:
        raise DomainError("n_sims must be positive")
    rng = np.random.default_rng(seed)
    cap = case.cover_cap
    totals = np.empty(n_sims)
    covered = np.empty(n_sims)
    done = 0
    while done < n_sims:
        b = min(batch_size, n_sims - done)
        counts = rng.poisson(case.lam, size=b).astype(np.int64)
        if isinstance(case.severity, PointMass):
            per_event = case.threshold_u + case.severity.value
            totals[done:done + b] = counts * per_event
            covered[done:done + b] = counts * min(per_event, cap)
        else:
            u01 = rng.random(int(counts.sum()))
            t, c = pot_compound_capped_sums(
                u01, counts, case.severity.scale_mu, case.severity.tail_tau,
                case.threshold_u, cap,
            )
            totals[done:done + b] = t
            covered[done:done + b] = c
        done += b
    return LossPanel(totals=totals, covered=covered, n_sims=n_sims)


@dataclass(frozen=True)
class PremiumSolveResult:
    value: float
    standard_error: float
    status: str  # "ok" | "uninsurable"
    gap_low: float
    gap_high: float

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def _buyer_gap(panel: LossPanel, utility: UtilitySpec, w: float, premium: float) -> float:
    # positive when paying `premium` is worse than staying uninsured
    uninsured = float(np.mean(utility_eval(utility, w - panel.totals)))
    insured = float(np.mean(utility_eval(utility, w - premium - panel.totals + panel.covered)))
    return uninsured - insured


def _bisect(fn, lo, hi, rel_tol=1e-6, max_iter=200):
    flo, fhi = fn(lo), fn(hi)
    if flo == 0.0:
        return lo, flo, fhi
    if fhi == 0.0:
        return hi, flo, fhi
    if flo * fhi > 0.0:
        return None, flo, fhi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fmid = fn(mid)
        if fmid == 0.0 or (hi - lo) <= rel_tol * max(1.0, abs(mid)):
            return mid, flo, fhi
        if (fmid > 0.0) == (flo > 0.0):
            lo, flo = mid, fmid
        else:
            hi = mid
    return 0.5 * (lo + hi), flo, fhi


def premium_max(
    case: InsuranceCase,
    utility: UtilitySpec,
    n_sims: int,
    seed: int,
    panel: LossPanel | None = None,
    n_se_batches: int = 10,
) -> PremiumSolveResult:
    """Largest premium the insured will pay (zero-utility indifference).

    Solved by bisection on [0, wealth] over the fixed panel; the standard
    error re-solves on panel batches.  ``uninsurable`` marks an indifference
    equation with no root below the firm's wealth.
    """
    if n_sims < 10_000:
        raise DomainError("premium solving needs n_sims >= 10000")
    if panel is None:
        panel = build_panel(case, n_sims, seed)
    w = case.wealth_w

    def gap(p):
        return _buyer_gap(panel, utility, w, p)

    root, gap_lo, gap_hi = _bisect(gap, 0.0, w)
    if root is None:
        status = "uninsurable"
        value = w if gap_hi < 0.0 else 0.0
        return PremiumSolveResult(value, math.nan, status, gap_lo, gap_hi)
    se = _batch_se(
        panel, n_se_batches,
        lambda sub: _bisect(lambda p: _buyer_gap(sub, utility, w, p), 0.0, w)[0],
    )
    return PremiumSolveResult(float(root), se, "ok", gap_lo, gap_hi)


def _batch_se(panel: LossPanel, n_batches: int, solver) -> float:
    vals = []
    for sub in panel.batches(n_batches):
        v = solver(sub)
        if v is not None:
            vals.append(v)
    if len(vals) < 2:
        return math.nan
    return float(np.std(vals, ddof=1) / math.sqrt(len(vals)))


def premium_min(
    case: InsuranceCase,
    insurer_utility: UtilitySpec,
    insurer_wealth: float,
    n_sims: int,
    seed: int,
    panel: LossPanel | None = None,
    n_se_batches: int = 10,
) -> PremiumSolveResult:
    """Smallest premium an insurer with the given wealth will accept.

    The insurer's exposure is the covered (per-event-capped) loss; the
    bracket doubles upward from [0, cap] until the indifference gap changes
    sign.
    """
    if n_sims < 10_000:
        raise DomainError("premium solving needs n_sims >= 10000")
    if insurer_wealth <= 0.0:
        raise DomainError("insurer wealth must be positive")
    if panel is None:
        panel = build_panel(case, n_sims, seed)
    base = utility_eval(insurer_utility, insurer_wealth)

    def gap(p):
        # positive once the premium makes underwriting attractive
        val = float(np.mean(utility_eval(insurer_utility, insurer_wealth + p - panel.covered)))
        return val - base

    if case.lam == 0.0 or float(np.max(panel.covered)) == 0.0:
        return PremiumSolveResult(0.0, 0.0, "ok", gap(0.0), gap(0.0))
    hi = max(case.cover_cap, 1.0)
    for _ in range(80):
        if gap(hi) > 0.0:
            break
        hi *= 2.0
    else:
        return PremiumSolveResult(math.inf, math.nan, "uninsurable", gap(0.0), gap(hi))
    root, gap_lo, gap_hi = _bisect(gap, 0.0, hi)
    if root is None:
        return PremiumSolveResult(0.0, 0.0, "ok", gap_lo, gap_hi)
    se = _batch_se(
        panel, n_se_batches,
        lambda sub: _bisect(
            lambda p: float(np.mean(utility_eval(insurer_utility, insurer_wealth + p - sub.covered))) - base,
            0.0, hi,
        )[0],
    )
    return PremiumSolveResult(float(root), se, "ok", gap_lo, gap_hi)


@dataclass(frozen=True)
class PoolSizeResult:
    pool_size_m: float | None
    status: str  # "ok" | "no_solution"
    gap_low: float
    gap_high: float
    residual: float | None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def pool_size(
    case: InsuranceCase,
    utility: UtilitySpec,
    p_plus: float,
    n_sims: int,
    seed: int,
    panel: LossPanel | None = None,
    m_bracket: tuple[float, float] = (1e-6, 1e12),
    residual_seed_offset: int = 104729,
) -> PoolSizeResult:
    """Pool size making an insurer with wealth ``m * p_plus`` indifferent.

    Solves ``v(m P) = E[v(m P + P - covered)]`` by bisection on the bracket.
    With no sign change the result is an explicit no-solution carrying the
    indifference-gap signs at both bracket ends.  When a root exists, the
    equation residual is re-evaluated on a fresh-seed panel.
    """
    if p_plus <= 0.0:
        raise DomainError("pool size needs a positive premium")
    lo, hi = m_bracket
    if not (0.0 < lo < hi):
        raise DomainError("invalid pool-size bracket")
    if panel is None:
        panel = build_panel(case, n_sims, seed)

    def gap(m):
        wealth = m * p_plus
        lhs = utility_eval(utility, wealth)
        rhs = float(np.mean(utility_eval(utility, wealth + p_plus - panel.covered)))
        return rhs - lhs

    # bisect on log m: the bracket spans many orders of magnitude
    def log_gap(s):
        return gap(math.exp(s))

    root_s, gap_lo, gap_hi = _bisect(log_gap, math.log(lo), math.log(hi), rel_tol=1e-9)
    if root_s is None:
        return PoolSizeResult(None, "no_solution", gap_lo, gap_hi, None)
    m_star = math.exp(root_s)
    fresh = build_panel(case, panel.n_sims, seed + residual_seed_offset)
    wealth = m_star * p_plus
    residual = float(
        np.mean(utility_eval(utility, wealth + p_plus - fresh.covered))
        - utility_eval(utility, wealth)
    )
    return PoolSizeResult(float(m_star), "ok", gap_lo, gap_hi, residual)


def relative_wealth(m: float, p_plus: float, w: float) -> float:
    """Insurer wealth ``m * p_plus`` relative to the insured firm's wealth."""
    if m <= 0.0 or p_plus <= 0.0 or w <= 0.0:
        raise DomainError("relative wealth needs positive arguments")
    return m * p_plus / w


@dataclass(frozen=True)
class PremiumResult:
    """Premiums, pool size and relative wealth for one case and utility."""

    p_plus: float
    p_minus: float
    pool_size_m: float | None
    relative_wealth: float | None
    mc_standard_error: float
    status: str  # "ok" | "uninsurable" | "no_pool"


@dataclass(frozen=True)
class YearPremiums:
    year: int
    utility: str
    lam: float
    mu: float
    tau: float
    result: PremiumResult


def _solve_case(case: InsuranceCase, utility: UtilitySpec, n_sims: int, seed: int) -> PremiumResult:
    panel = build_panel(case, n_sims, seed)
    buyer = premium_max(case, utility, n_sims, seed, panel=panel)
    if not buyer.ok:
        return PremiumResult(buyer.value, math.nan, None, None, math.nan, "uninsurable")
    if buyer.value <= 0.0:
        return PremiumResult(0.0, 0.0, None, None, buyer.standard_error, "ok")
    pool = pool_size(case, utility, buyer.value, n_sims, seed, panel=panel)
    if not pool.ok:
        return PremiumResult(buyer.value, math.nan, None, None, buyer.standard_error, "no_pool")
    # at insurer wealth m*P the indifference premium is the equilibrium one;
    # reporting it checks the solver consistency rather than assuming it
    insurer = premium_min(case, utility, pool.pool_size_m * buyer.value, n_sims, seed, panel=panel)
    return PremiumResult(
        p_plus=buyer.value,
        p_minus=insurer.value,
        pool_size_m=pool.pool_size_m,
        relative_wealth=relative_wealth(pool.pool_size_m, buyer.value, case.wealth_w),
        mc_standard_error=buyer.standard_error,
        status="ok",
    )


def premium_timeseries(
    frequency_fit: RegressionFit,
    severity_fit: RegressionFit,
    profile: CovariateRow,
    years: Sequence[int],
    start_year: int,
    case_template: InsuranceCase,
    utilities: Sequence[UtilitySpec],
    n_sims: int,
    seed: int,
) -> list[YearPremiums]:
    """Predicted-parameter premium series over a year grid.

    For each year the fitted models supply (intensity, scale, tail) at the
    profile; each utility then gets the buyer premium, pool size and relative
    wealth.  Failures are recorded per year in the result status rather than
    raised.
    """
    out: list[YearPremiums] = []
    for year in years:
        row = CovariateRow(time=float(year - start_year), dummies=dict(profile.dummies))
        lam = predict_parameters(frequency_fit, row)["lambda"]
        sev = predict_parameters(severity_fit, row)
        mu, tau = sev["mu"], sev["tau"]
        case = replace(
            case_template,
            lam=lam,
            severity=GpdParams(mu, tau),
            threshold_u=severity_fit.spec.threshold_u or 0.0,
        )
        for k, utility in enumerate(utilities):
            res = _solve_case(case, utility, n_sims, seed + 7919 * k)
            out.append(YearPremiums(year, utility.label, lam, mu, tau, res))
    return out


def premium_series_csv(series: Sequence[YearPremiums]) -> str:
    buf = io.StringIO()
    buf.write("year,utility,lambda,mu,tau,p_plus,p_minus,pool_size,relative_wealth,log_relative_wealth,status\n")
    for item in series:
        r = item.result
        pool = "" if r.pool_size_m is None else repr(r.pool_size_m)
        rel = "" if r.relative_wealth is None else repr(r.relative_wealth)
        logrel = "" if not r.relative_wealth else repr(math.log(r.relative_wealth))
        buf.write(
            f"{item.year},{item.utility},{item.lam!r},{item.mu!r},{item.tau!r},"
            f"{r.p_plus!r},{r.p_minus!r},{pool},{rel},{logrel},{r.status}\n"
        )
    return buf.getvalue()
