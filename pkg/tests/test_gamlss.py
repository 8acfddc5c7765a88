import math

import numpy as np
import pytest

from tailrisk.data import CovariateRow, FrequencyRecord, SyntheticSpec, simulate_panel
from tailrisk.dists import FamilyTag, fit_family_mle, fit_gpd_mle
from tailrisk.errors import (
    DomainError,
    InsufficientDataError,
    RankDeficiencyError,
    SeparationError,
)
from tailrisk.gamlss import (
    LinkModelSpec,
    RegressionFit,
    coefficient_table_csv,
    fit_gpd_regression,
    fit_poisson_regression,
    fit_severity_family_regression,
    predict_parameters,
    quantile_residuals,
    select_smoothing_df,
)


def freq_records(counts, rows):
    return [
        FrequencyRecord(f"C{i}", 2008 + int(r.time), int(c), r)
        for i, (c, r) in enumerate(zip(counts, rows))
    ]


def plain_rows(n, time=0.0, **dummies):
    base = {k: 0.0 for k in ("L_USA",)}
    base.update(dummies)
    return [CovariateRow(time, dict(base)) for _ in range(n)]


def panel_spec(**kw):
    defaults = dict(
        lambda_coefficients={"intercept": 0.3, "time": 0.05, "R_big": 0.4},
        mu_coefficients={"intercept": 0.0, "L_USA": 0.5},
        tau_coefficients={"intercept": 0.3, "L_USA": 0.3},
        n_companies=800,
        n_years=6,
        threshold=0.0,
        seed=1,
    )
    defaults.update(kw)
    return SyntheticSpec(**defaults)


class TestPoisson:
    def test_intercept_only_closed_form(self):
        rows = plain_rows(50)
        recs = freq_records([4] * 50, rows)
        spec = LinkModelSpec("frequency", "poisson", time_effect="none")
        fit = fit_poisson_regression(recs, spec)
        assert fit.converged
        assert fit.table("lambda").coefficient("intercept") == pytest.approx(math.log(4.0), abs=1e-8)

    def test_recovery_single_seed(self):
        spec = panel_spec()
        panel = simulate_panel(spec)
        mspec = LinkModelSpec("frequency", "poisson", design_columns=("R_big",))
        fit = fit_poisson_regression(panel.frequency, mspec)
        t = fit.table("lambda")
        for name, truth in (("intercept", 0.3), ("time", 0.05), ("R_big", 0.4)):
            lo, hi = t.wald_interval(name)
            assert lo - 0.05 < truth < hi + 0.05

    def test_separation_reported_with_column(self):
        rows = plain_rows(20)
        for i in range(10):
            rows[i] = CovariateRow(0.0, {"L_USA": 1.0})
        counts = [0] * 10 + [3] * 10
        recs = freq_records(counts, rows)
        spec = LinkModelSpec("frequency", "poisson", design_columns=("L_USA",), time_effect="none")
        with pytest.raises(SeparationError) as err:
            fit_poisson_regression(recs, spec)
        assert err.value.column == "L_USA"

    def test_rank_deficiency(self):
        rows = [CovariateRow(0.0, {"A": 1.0, "B": 1.0}) for _ in range(30)]
        recs = freq_records([1] * 30, rows)
        spec = LinkModelSpec("frequency", "poisson", design_columns=("A", "B"), time_effect="none")
        with pytest.raises(RankDeficiencyError):
            fit_poisson_regression(recs, spec)

    def test_empty_column_dropped_with_warning(self):
        rows = plain_rows(30)
        recs = freq_records([2] * 30, rows)
        spec = LinkModelSpec("frequency", "poisson", design_columns=("L_USA",), time_effect="none")
        with pytest.warns(UserWarning, match="empty design column"):
            fit = fit_poisson_regression(recs, spec)
        assert fit.dropped_columns == ("L_USA",)

    def test_monotone_trace(self):
        spec = panel_spec(n_companies=200)
        panel = simulate_panel(spec)
        mspec = LinkModelSpec("frequency", "poisson", design_columns=("R_big",))
        fit = fit_poisson_regression(panel.frequency, mspec)
        diffs = np.diff(fit.trace)
        assert np.all(diffs >= -1e-9 * np.maximum(1.0, np.abs(fit.trace[:-1])))


class TestGpdRegression:
    def test_reduces_to_plain_mle(self):
        rng = np.random.default_rng(5)
        y = 1.0 * ((1.0 - rng.random(2000)) ** (-1.0 / 1.5) - 1.0)
        rows = plain_rows(2000)
        spec = LinkModelSpec("severity", "gpd", time_effect="none")
        fit = fit_gpd_regression(y, rows, spec)
        ref = fit_gpd_mle(y)
        assert fit.log_likelihood == pytest.approx(ref.log_likelihood, abs=1e-6)
        assert math.exp(fit.table("mu").coefficient("intercept")) == pytest.approx(
            ref.params.scale_mu, rel=1e-5
        )
        assert math.exp(fit.table("tau").coefficient("intercept")) == pytest.approx(
            ref.params.tail_tau, rel=1e-5
        )

    def test_recovery_single_seed(self):
        panel = simulate_panel(panel_spec(n_companies=2500))
        spec = LinkModelSpec("severity", "gpd", design_columns=("L_USA",))
        fit = fit_gpd_regression(panel.severities, panel.severity_rows, spec)
        assert fit.converged
        t = fit.table("tau")
        lo, hi = t.wald_interval("L_USA")
        assert lo - 0.05 < 0.3 < hi + 0.05
        m = fit.table("mu")
        lo, hi = m.wald_interval("L_USA")
        assert lo - 0.05 < 0.5 < hi + 0.05

    def test_insufficient_data(self):
        rows = [CovariateRow(0.0, {f"d{i}": 1.0 for i in range(10)})]
        spec = LinkModelSpec(
            "severity", "gpd", design_columns=tuple(f"d{i}" for i in range(10)),
            time_effect="none",
        )
        with pytest.raises((InsufficientDataError, RankDeficiencyError)):
            fit_gpd_regression([1.0], rows, spec)

    def test_nonpositive_excess_rejected(self):
        spec = LinkModelSpec("severity", "gpd", time_effect="none")
        with pytest.raises(DomainError):
            fit_gpd_regression([1.0, 0.0], plain_rows(2), spec)

    def test_scale_invariance(self):
        panel = simulate_panel(panel_spec(n_companies=600))
        spec = LinkModelSpec("severity", "gpd", design_columns=("L_USA",))
        fit1 = fit_gpd_regression(panel.severities, panel.severity_rows, spec)
        c = 37.5
        fit2 = fit_gpd_regression(c * panel.severities, panel.severity_rows, spec)
        t1, t2 = fit1.table("tau"), fit2.table("tau")
        assert np.allclose(t1.estimates, t2.estimates, atol=1e-6)
        assert np.allclose(t1.score_ratios, t2.score_ratios, atol=1e-4)
        m1, m2 = fit1.table("mu"), fit2.table("mu")
        assert m2.coefficient("intercept") - m1.coefficient("intercept") == pytest.approx(
            math.log(c), abs=1e-6
        )
        others = [i for i, n in enumerate(m1.names) if n != "intercept"]
        assert np.allclose(m1.estimates[others], m2.estimates[others], atol=1e-6)


class TestGradients:
    @staticmethod
    def _fd_check(family_name, y, rows, spec, seed):
        from tailrisk.gamlss import _build_design, _FAMILIES, _gammas_for

        design = _build_design(rows, spec)
        family = _FAMILIES[family_name]
        n_blocks = spec.n_blocks()
        X = design.matrix
        p = X.shape[1]
        p_base = p - design.n_spline
        gammas = _gammas_for(spec)
        rng = np.random.default_rng(seed)

        def pen_ll(flat):
            ths = [flat[k * p:(k + 1) * p] for k in range(n_blocks)]
            etas = [X @ th for th in ths]
            ll = family.loglik(y, etas)
            pen = sum(g * float(th[p_base:] @ th[p_base:]) for g, th in zip(gammas, ths))
            return ll - pen

        worst = 0.0
        for _ in range(20):
            flat = rng.normal(0.0, 0.3, size=n_blocks * p)
            etas = [X @ flat[k * p:(k + 1) * p] for k in range(n_blocks)]
            scores = family.score(y, etas)
            analytic = []
            for k in range(n_blocks):
                g = X.T @ scores[k]
                if design.n_spline and gammas[k] > 0.0:
                    g[p_base:] -= 2.0 * gammas[k] * flat[k * p + p_base:(k + 1) * p]
                analytic.append(g)
            analytic = np.concatenate(analytic)
            h = 1e-6
            fd = np.empty_like(flat)
            for j in range(flat.size):
                up, dn = flat.copy(), flat.copy()
                up[j] += h
                dn[j] -= h
                fd[j] = (pen_ll(up) - pen_ll(dn)) / (2.0 * h)
            denom = np.maximum(np.abs(analytic), np.maximum(np.abs(fd), 1.0))
            worst = max(worst, float(np.max(np.abs(analytic - fd) / denom)))
        return worst

    def test_poisson_gradient_matches_fd(self):
        panel = simulate_panel(panel_spec(n_companies=60, n_years=5))
        counts = np.array([r.count for r in panel.frequency], dtype=float)
        rows = [r.row for r in panel.frequency]
        spec = LinkModelSpec(
            "frequency", "poisson", design_columns=("R_big",),
            time_effect="spline", smoothing=(0.7,),
        )
        assert self._fd_check("poisson", counts, rows, spec, seed=2) < 1e-4

    def test_gpd_gradient_matches_fd(self):
        panel = simulate_panel(panel_spec(n_companies=150))
        spec = LinkModelSpec(
            "severity", "gpd", design_columns=("L_USA",),
            time_effect="spline", smoothing=(0.4, 0.9),
        )
        assert self._fd_check("gpd", panel.severities, panel.severity_rows, spec, seed=3) < 1e-4

    def test_location_scale_gradients_match_fd(self):
        rng = np.random.default_rng(4)
        y = np.exp(rng.normal(0.5, 0.7, size=300))
        rows = [CovariateRow(float(t % 5), {"L_USA": float(t % 2)}) for t in range(300)]
        for fam in ("lognormal", "loglogistic"):
            spec = LinkModelSpec("severity", fam, design_columns=("L_USA",))
            assert self._fd_check(fam, y, rows, spec, seed=5) < 1e-4


class TestLocationScaleFamilies:
    def test_lognormal_intercept_only_closed_form(self):
        rng = np.random.default_rng(6)
        y = np.exp(rng.normal(0.4, 1.1, size=400))
        spec = LinkModelSpec("severity", "lognormal", time_effect="none")
        fit = fit_severity_family_regression(y, plain_rows(400), spec)
        ly = np.log(y)
        assert fit.table("location").coefficient("intercept") == pytest.approx(ly.mean(), abs=1e-6)
        assert math.exp(fit.table("log_scale").coefficient("intercept")) == pytest.approx(
            ly.std(), rel=1e-5
        )

    def test_reduction_matches_family_mle(self):
        rng = np.random.default_rng(7)
        y = np.exp(rng.normal(0.0, 0.9, size=500))
        spec = LinkModelSpec("severity", "lognormal", time_effect="none")
        fit = fit_severity_family_regression(y, plain_rows(500), spec)
        ref = fit_family_mle(y, FamilyTag.LOG_NORMAL)
        assert fit.log_likelihood == pytest.approx(ref.log_likelihood, abs=1e-6)

    def test_correct_family_wins_aic(self):
        wins = 0
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            y = np.exp(rng.normal(0.0, 0.8, size=10_000))
            rows = plain_rows(10_000)
            ln = fit_severity_family_regression(
                y, rows, LinkModelSpec("severity", "lognormal", time_effect="none")
            )
            ll = fit_severity_family_regression(
                y, rows, LinkModelSpec("severity", "loglogistic", time_effect="none")
            )
            if ln.aic < ll.aic:
                wins += 1
        assert wins >= 9


class TestPrediction:
    def test_link_inversion_at_zero_row(self):
        panel = simulate_panel(panel_spec(n_companies=400))
        spec = LinkModelSpec("severity", "gpd", design_columns=("L_USA",))
        fit = fit_gpd_regression(panel.severities, panel.severity_rows, spec)
        row = CovariateRow(0.0, {"L_USA": 0.0})
        pred = predict_parameters(fit, row)
        a = fit.table("mu").coefficient("intercept")
        b = fit.table("tau").coefficient("intercept")
        assert pred["mu"] == pytest.approx(math.exp(a), rel=1e-12)
        assert pred["tau"] == pytest.approx(math.exp(b), rel=1e-12)

    def test_time_increment_multiplies_lambda(self):
        panel = simulate_panel(panel_spec(n_companies=400))
        spec = LinkModelSpec("frequency", "poisson", design_columns=("R_big",))
        fit = fit_poisson_regression(panel.frequency, spec)
        beta_t = fit.table("lambda").coefficient("time")
        r0 = CovariateRow(2.0, {"R_big": 1.0})
        r1 = CovariateRow(3.0, {"R_big": 1.0})
        lam0 = predict_parameters(fit, r0)["lambda"]
        lam1 = predict_parameters(fit, r1)["lambda"]
        assert lam1 / lam0 == pytest.approx(math.exp(beta_t), rel=1e-10)

    def test_trajectory_over_years(self):
        panel = simulate_panel(panel_spec(n_companies=400))
        fspec = LinkModelSpec("frequency", "poisson", design_columns=("R_big",))
        sspec = LinkModelSpec("severity", "gpd", design_columns=("L_USA",))
        ffit = fit_poisson_regression(panel.frequency, fspec)
        sfit = fit_gpd_regression(panel.severities, panel.severity_rows, sspec)
        series = []
        for t in range(13):
            row = CovariateRow(float(t), {"R_big": 1.0, "L_USA": 1.0})
            lam = predict_parameters(ffit, row)["lambda"]
            sev = predict_parameters(sfit, row)
            series.append((lam, sev["mu"], sev["tau"]))
        assert len(series) == 13
        assert all(all(v > 0 for v in item) for item in series)

    def test_roundtrip_serialization_preserves_predictions(self):
        panel = simulate_panel(panel_spec(n_companies=300))
        spec = LinkModelSpec("severity", "gpd", design_columns=("L_USA",))
        fit = fit_gpd_regression(panel.severities, panel.severity_rows, spec)
        clone = RegressionFit.from_dict(fit.to_dict())
        row = CovariateRow(1.5, {"L_USA": 1.0})
        assert predict_parameters(clone, row) == predict_parameters(fit, row)


class TestQuantileResiduals:
    def test_pit_under_correct_model(self):
        from scipy import stats as ss

        passes = 0
        for seed in range(10):
            panel = simulate_panel(panel_spec(n_companies=1200, seed=seed))
            spec = LinkModelSpec("severity", "gpd", design_columns=("L_USA",))
            fit = fit_gpd_regression(panel.severities, panel.severity_rows, spec)
            qr = quantile_residuals(fit, panel.severities, panel.severity_rows)
            if ss.kstest(qr.residuals, "norm").pvalue > 0.01:
                passes += 1
        assert passes >= 9

    def test_misspecified_model_fails(self):
        from scipy import stats as ss

        rng = np.random.default_rng(8)
        y = rng.exponential(1.0, size=10_000)
        rows = plain_rows(10_000)
        # force a wildly wrong tail by fitting gpd then inflating tau
        spec = LinkModelSpec("severity", "gpd", time_effect="none")
        fit = fit_gpd_regression(y, rows, spec)
        fit.tables["tau"].estimates[0] = math.log(50.0)
        fit.tables["mu"].estimates[0] = math.log(0.05)
        qr = quantile_residuals(fit, y, rows)
        assert ss.kstest(qr.residuals, "norm").pvalue < 1e-6

    def test_single_observation_finite(self):
        rng = np.random.default_rng(9)
        y = 1.0 * ((1.0 - rng.random(500)) ** (-1.0) - 1.0)
        spec = LinkModelSpec("severity", "gpd", time_effect="none")
        fit = fit_gpd_regression(y, plain_rows(500), spec)
        qr = quantile_residuals(fit, [y[0]], plain_rows(1))
        assert qr.residuals.size == 1 and np.isfinite(qr.residuals[0])


class TestSplineSelection:
    def _freq_panel(self, h_of_t, seed, n_companies=150, n_years=10):
        rng = np.random.default_rng(seed)
        records = []
        for c in range(n_companies):
            for t in range(n_years):
                lam = math.exp(0.2 + h_of_t(t))
                records.append(
                    FrequencyRecord(f"C{c}", 2008 + t, int(rng.poisson(lam)),
                                    CovariateRow(float(t), {}))
                )
        return records

    def test_gamma_to_infinity_collapses_to_line(self):
        records = self._freq_panel(lambda t: 0.08 * t, seed=10)
        lin = fit_poisson_regression(
            records, LinkModelSpec("frequency", "poisson", time_effect="linear")
        )
        heavy = fit_poisson_regression(
            records,
            LinkModelSpec("frequency", "poisson", time_effect="spline", smoothing=(1e12,)),
        )
        assert heavy.log_likelihood == pytest.approx(lin.log_likelihood, abs=1e-6)

    def test_linear_truth_selects_grid_minimum(self):
        # grid points separated by >=2.5 edf keep AIC's overfit probability low
        hits = 0
        for seed in range(10):
            records = self._freq_panel(lambda t: 0.05 * t, seed=20 + seed)
            spec = LinkModelSpec("frequency", "poisson", time_effect="spline")
            sel = select_smoothing_df(records, spec, df_grid=[0.5, 3.0, 6.0])
            if sel.chosen_df == 0.5:
                hits += 1
        assert hits >= 8

    def test_sinusoidal_truth_selects_larger_df(self):
        hits = 0
        for seed in range(10):
            records = self._freq_panel(
                lambda t: 0.8 * math.sin(2.0 * math.pi * t / 5.0), seed=40 + seed,
                n_companies=300,
            )
            spec = LinkModelSpec("frequency", "poisson", time_effect="spline")
            sel = select_smoothing_df(records, spec, df_grid=[0.5, 2.0, 4.0, 6.0])
            if sel.chosen_df > 0.5:
                hits += 1
        assert hits >= 8

    def test_single_point_grid(self):
        records = self._freq_panel(lambda t: 0.05 * t, seed=60)
        spec = LinkModelSpec("frequency", "poisson", time_effect="spline")
        sel = select_smoothing_df(records, spec, df_grid=[3.0])
        assert sel.chosen_df == 3.0

    def test_edf_decreasing_in_gamma(self):
        records = self._freq_panel(lambda t: 0.3 * math.sin(t), seed=61)
        edfs = []
        for gamma in (1e-4, 1e-2, 1.0, 1e2, 1e4):
            fit = fit_poisson_regression(
                records,
                LinkModelSpec("frequency", "poisson", time_effect="spline", smoothing=(gamma,)),
            )
            edfs.append(fit.effective_df)
        assert all(b < a + 1e-9 for a, b in zip(edfs, edfs[1:]))
        # bracketed between the linear model's df and the unpenalised dimension
        assert edfs[-1] >= 2.0 - 1e-6

    def test_aic_prefers_smaller_null_model(self):
        wins = 0
        for seed in range(50):
            rng = np.random.default_rng(200 + seed)
            rows = [
                CovariateRow(float(i % 5), {"L_USA": float(rng.integers(2))})
                for i in range(200)
            ]
            counts = rng.poisson(2.0, size=200)
            recs = freq_records(counts, rows)
            small = fit_poisson_regression(
                recs, LinkModelSpec("frequency", "poisson", time_effect="none")
            )
            big = fit_poisson_regression(
                recs,
                LinkModelSpec("frequency", "poisson", design_columns=("L_USA",), time_effect="none"),
            )
            if small.aic < big.aic:
                wins += 1
        assert wins >= 30


class TestSpecValidation:
    def test_threshold_only_for_gpd(self):
        with pytest.raises(DomainError):
            LinkModelSpec("severity", "lognormal", threshold_u=1.0)

    def test_gpd_gets_default_threshold(self):
        spec = LinkModelSpec("severity", "gpd")
        assert spec.threshold_u == 0.0

    def test_frequency_must_be_poisson(self):
        with pytest.raises(DomainError):
            LinkModelSpec("frequency", "gpd")

    def test_spline_df_at_least_one(self):
        with pytest.raises(DomainError):
            LinkModelSpec("frequency", "poisson", time_effect="spline", spline_df=0.5)

    def test_smoothing_arity(self):
        with pytest.raises(DomainError):
            LinkModelSpec("severity", "gpd", time_effect="spline", smoothing=(1.0,))

    def test_aic_identity(self):
        panel = simulate_panel(panel_spec(n_companies=200))
        spec = LinkModelSpec("severity", "gpd", design_columns=("L_USA",))
        fit = fit_gpd_regression(panel.severities, panel.severity_rows, spec)
        assert fit.aic == pytest.approx(-2.0 * fit.log_likelihood + 2.0 * fit.effective_df)
        assert fit.effective_df == pytest.approx(fit.n_parameters, abs=1e-6)

    def test_table_csv_layout(self):
        panel = simulate_panel(panel_spec(n_companies=200))
        spec = LinkModelSpec("severity", "gpd", design_columns=("L_USA",))
        fit = fit_gpd_regression(panel.severities, panel.severity_rows, spec)
        text = coefficient_table_csv(fit)
        lines = text.strip().splitlines()
        assert lines[0] == "parameter,covariate,estimate,standard_error,score_ratio,stars"
        assert len(lines) == 1 + 2 * 3  # two parameters x (intercept, L_USA, time)
