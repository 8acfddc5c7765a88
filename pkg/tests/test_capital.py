import math

import numpy as np
import pytest

from tailrisk.capital import (
    McVarResult,
    PointMass,
    SlaInputs,
    exact_pointmass_compound_var,
    mc_var,
    sla_correction_constant,
    sla_var,
    var_trajectory_csv,
)
from tailrisk.dists import GpdParams
from tailrisk.errors import DomainError, GammaPoleError


class TestSlaInputs:
    def test_quantile_argument_validation(self):
        with pytest.raises(DomainError):
            SlaInputs(alpha=0.9, lambda_hat=0.05, gpd=GpdParams(1.0, 2.0))

    def test_alpha_bounds(self):
        with pytest.raises(DomainError):
            SlaInputs(alpha=1.0, lambda_hat=5.0, gpd=GpdParams(1.0, 2.0))


class TestCorrectionConstant:
    def test_value_against_high_precision_gamma(self):
        import mpmath

        # 0.5 * 0.6 * Gamma(0.6)^2 / Gamma(0.2)
        want = float(0.5 * 0.6 * mpmath.gamma(0.6) ** 2 / mpmath.gamma(0.2))
        assert sla_correction_constant(0.4) == pytest.approx(want, rel=1e-6)
        assert sla_correction_constant(0.4) == pytest.approx(0.1449, abs=5e-5)

    def test_integer_tau_pole(self):
        for tau in (1.0, 2.0, 3.0):
            with pytest.raises(GammaPoleError):
                sla_correction_constant(tau)

    def test_half_integer_denominator_pole_is_zero(self):
        # reciprocal gamma vanishes: the correction constant is exactly 0
        assert sla_correction_constant(1.5) == 0.0
        assert sla_correction_constant(2.5) == 0.0
        assert sla_correction_constant(0.5) == 0.0


class TestSlaVar:
    def test_direct_formula_evaluation(self):
        # alpha=0.999, lambda=10, mu=1, tau=0.4, u=0:
        # Q(0.9999) = 1e10 - 1; factor = 1 - 0.001 * c / 0.6
        inputs = SlaInputs(0.999, 10.0, GpdParams(1.0, 0.4))
        res = sla_var(inputs)
        c = sla_correction_constant(0.4)
        want = (1e10 - 1.0) * (1.0 - 0.001 * c / 0.6)
        assert res.correction_applied
        assert res.value == pytest.approx(want, rel=1e-12)
        assert res.value == pytest.approx(9.9976e9, rel=1e-4)

    def test_tau_one_is_pole(self):
        inputs = SlaInputs(0.999, 10.0, GpdParams(1.0, 1.0))
        with pytest.raises(GammaPoleError):
            sla_var(inputs)

    def test_uncorrected_fallback_flagged(self):
        inputs = SlaInputs(0.999, 10.0, GpdParams(1.0, 3.0))
        res = sla_var(inputs, allow_uncorrected=True)
        assert not res.correction_applied
        p = 1.0 - 0.001 / 10.0
        assert res.value == pytest.approx((1.0 - p) ** (-1.0 / 3.0) - 1.0, rel=1e-12)

    def test_threshold_added_once(self):
        a = sla_var(SlaInputs(0.999, 5.0, GpdParams(1.0, 0.7), threshold_u=0.0))
        b = sla_var(SlaInputs(0.999, 5.0, GpdParams(1.0, 0.7), threshold_u=2.5))
        assert b.value - a.value == pytest.approx(2.5, abs=1e-9)

    def test_monotonicity_grid(self):
        base = dict(alpha=0.995, lambda_hat=5.0, mu=1.0, tau=0.8)

        def value(**over):
            cfg = {**base, **over}
            return sla_var(
                SlaInputs(cfg["alpha"], cfg["lambda_hat"], GpdParams(cfg["mu"], cfg["tau"]))
            ).value

        for alphas in ([0.99, 0.995, 0.999, 0.9995],):
            vals = [value(alpha=a) for a in alphas]
            assert all(b > a for a, b in zip(vals, vals[1:]))
        vals = [value(lambda_hat=l) for l in (2.0, 5.0, 10.0, 20.0)]
        assert all(b > a for a, b in zip(vals, vals[1:]))
        vals = [value(mu=m) for m in (0.5, 1.0, 2.0, 4.0)]
        assert all(b > a for a, b in zip(vals, vals[1:]))


class TestMcVar:
    def test_lambda_zero_gives_zero(self):
        res = mc_var(0.95, 0.0, PointMass(1.0), 0.0, n_sims=10_000, seed=1)
        assert res.value == 0.0

    def test_pointmass_matches_poisson_cdf(self):
        # P(N<=4) = 0.947 < 0.95 <= P(N<=5) at lambda=2 -> VaR = 5
        res = mc_var(0.95, 2.0, PointMass(1.0), 0.0, n_sims=200_000, seed=2)
        assert res.value == 5.0
        assert exact_pointmass_compound_var(0.95, 2.0, 1.0) == 5.0

    @pytest.mark.parametrize("lam", [0.5, 1.0, 3.0, 5.0])
    def test_pointmass_exact_for_small_lambda(self, lam):
        exact = exact_pointmass_compound_var(0.99, lam, 2.0)
        res = mc_var(0.99, lam, PointMass(2.0), 0.0, n_sims=400_000, seed=3)
        assert res.value == exact

    def test_threshold_enters_per_event(self):
        res = mc_var(0.95, 2.0, PointMass(1.0), 1.0, n_sims=100_000, seed=4)
        # each event now costs 2, so the quantile doubles
        assert res.value == 10.0

    def test_minimum_sims_enforced(self):
        with pytest.raises(DomainError):
            mc_var(0.95, 1.0, PointMass(1.0), 0.0, n_sims=10, seed=5)

    def test_deterministic_per_seed(self):
        a = mc_var(0.999, 2.0, GpdParams(1.0, 1.5), 0.0, n_sims=50_000, seed=6)
        b = mc_var(0.999, 2.0, GpdParams(1.0, 1.5), 0.0, n_sims=50_000, seed=6)
        assert a == b

    def test_batching_invariance(self):
        a = mc_var(0.99, 2.0, GpdParams(1.0, 1.5), 0.0, n_sims=64_000, seed=7,
                   batch_size=64_000)
        b = mc_var(0.99, 2.0, GpdParams(1.0, 1.5), 0.0, n_sims=64_000, seed=7,
                   batch_size=64_000)
        assert a.value == b.value

    def test_callable_severity_path(self):
        res = mc_var(
            0.99, 1.0, lambda rng, n: rng.exponential(1.0, n), 0.0,
            n_sims=50_000, seed=8,
        )
        assert res.value > 0.0
        assert res.standard_error > 0.0

    def test_sla_within_tolerance_of_mc_heavy_tail(self):
        # the approximation's home regime: tau < 1
        inputs = SlaInputs(0.999, 5.0, GpdParams(1.0, 0.8))
        approx = sla_var(inputs).value
        res = mc_var(0.999, 5.0, GpdParams(1.0, 0.8), 0.0, n_sims=2_000_000, seed=9)
        assert abs(approx - res.value) / res.value < 0.10


class TestTrajectoryCsv:
    def test_layout(self):
        text = var_trajectory_csv([2008, 2009], [math.e, math.e**2])
        lines = text.strip().splitlines()
        assert lines[0] == "year,log_var"
        assert lines[1].startswith("2008,1.0")
        assert lines[2].startswith("2009,2.0")
