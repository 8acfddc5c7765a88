"""Command-line front end: ingest a loss CSV, run analysis stages, and emit
plot-ready CSV/JSON artifacts.

Every stage writes its artifacts plus a ``manifest.json`` keyed by a hash of
the semantically relevant configuration (the output directory and anything
cosmetic are excluded).  All randomness sits behind ``--seed``; outputs are
byte-identical across runs with the same inputs and flags.  Figures are
emitted as CSV plus a JSON descriptor; no plotting engine is bundled.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np
from scipy import stats as _sstats

from . import capital, insure, modelsel, rank, tail
from .data import (
    DUMMY_COLUMNS,
    CovariateRow,
    RiskType,
    SyntheticSpec,
    aggregate_frequency,
    encode_covariates,
    events_to_csv,
    generate_synthetic,
    parse_csv,
    risk_dummy_name,
)
from .dists import FamilyTag, GpdParams
from .errors import TailRiskError
from .gamlss import (
    LinkModelSpec,
    RegressionFit,
    coefficient_table_csv,
    fit_gpd_regression,
    fit_poisson_regression,
    fit_severity_family_regression,
    predict_parameters,
    select_smoothing_df,
)

_BASE_COLUMNS = tuple(DUMMY_COLUMNS)


class _StageError(Exception):
    pass


class _Artifacts:
    """Collects written files so a failing stage can clean up after itself."""

    def __init__(self, outdir: Path):
        self.outdir = outdir
        self.files: list[str] = []

    def write(self, name: str, text: str) -> None:
        self.outdir.mkdir(parents=True, exist_ok=True)
        path = self.outdir / name
        path.write_text(text, encoding="utf-8", newline="\n")
        self.files.append(name)

    def write_json(self, name: str, payload) -> None:
        self.write(name, json.dumps(payload, indent=2, sort_keys=True) + "\n")

    def cleanup(self) -> None:
        for name in self.files:
            try:
                (self.outdir / name).unlink()
            except OSError:
                pass

    def manifest(self, command: str, config: dict) -> None:
        canonical = json.dumps(config, sort_keys=True)
        digest = hashlib.sha256(canonical.encode("utf-8")).hexdigest()
        self.write_json(
            "manifest.json",
            {
                "command": command,
                "config": config,
                "config_hash": digest,
                "artifacts": sorted(self.files),
            },
        )


def _load_events(path: str):
    res = parse_csv(path)
    if not res.events:
        raise _StageError(f"no usable events in {path} ({len(res.errors)} rejected rows)")
    return res


def _figure_descriptor(title, x_label, y_label, log_y=False):
    return {"title": title, "x_label": x_label, "y_label": y_label, "log_y": log_y}


def _moment_row(values: np.ndarray) -> dict:
    return {
        "n": int(values.size),
        "mean": float(np.mean(values)),
        "median": float(np.median(values)),
        "stdev": float(np.std(values, ddof=1)) if values.size > 1 else 0.0,
        "skewness": float(_sstats.skew(values)) if values.size > 2 else 0.0,
        "kurtosis": float(_sstats.kurtosis(values)) if values.size > 3 else 0.0,
    }


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def _stage_ingest(args, art: _Artifacts) -> dict:
    res = _load_events(args.input)
    art.write("events.csv", events_to_csv(res.events))
    buf = io.StringIO()
    buf.write("row_number,reason\n")
    for e in res.errors:
        buf.write(f"{e.row_number},{e.reason}\n")
    art.write("errors.csv", buf.getvalue())
    return {"input": args.input}


def _stage_describe(args, art: _Artifacts) -> dict:
    res = _load_events(args.input)
    groups: dict[str, list[float]] = {"all": []}
    for e in res.events:
        groups["all"].append(e.loss)
        groups.setdefault(e.risk_type.label, []).append(e.loss)
    buf = io.StringIO()
    buf.write("risk_type,n,mean,median,stdev,skewness,kurtosis\n")
    for name in sorted(groups):
        m = _moment_row(np.asarray(groups[name]))
        buf.write(
            f"{name},{m['n']},{m['mean']!r},{m['median']!r},{m['stdev']!r},"
            f"{m['skewness']!r},{m['kurtosis']!r}\n"
        )
    art.write("descriptive.csv", buf.getvalue())
    return {"input": args.input}


def _stage_hill(args, art: _Artifacts) -> dict:
    res = _load_events(args.input)
    groups: dict[str, list[float]] = {"all": [e.loss for e in res.events]}
    if args.by_risk_type:
        for e in res.events:
            groups.setdefault(e.risk_type.slug, []).append(e.loss)
    for name in sorted(groups):
        losses = np.asarray(groups[name])
        if losses.size < 3:
            continue
        k_max = args.k_max or losses.size - 1
        k_max = min(k_max, losses.size - 1)
        curve = tail.hill_curve(losses, args.k_min, k_max)
        art.write(f"hill_{name}.csv", curve.to_csv())
        art.write_json(
            f"hill_{name}.json",
            _figure_descriptor(f"tail-index estimates ({name})", "k", "tau_hat"),
        )
    return {
        "input": args.input,
        "k_min": args.k_min,
        "k_max": args.k_max,
        "by_risk_type": bool(args.by_risk_type),
    }


def _stage_threshold(args, art: _Artifacts) -> dict:
    res = _load_events(args.input)
    groups: dict[str, list[float]] = {}
    for e in res.events:
        groups.setdefault(e.risk_type.label, []).append(e.loss)
    buf = io.StringIO()
    buf.write(
        "risk_type,threshold,threshold_level,min,n_exceedances,mean,median,"
        "stdev,skewness,kurtosis,status\n"
    )
    for name in sorted(groups):
        losses = np.asarray(groups[name])
        if losses.size < 10:
            buf.write(f"{name},,,,,,,,,,too few observations\n")
            continue
        sel = tail.select_threshold(losses, alpha=args.alpha)
        if not sel.found:
            buf.write(f"{name},,,,,,,,,,no threshold found\n")
            continue
        exceed = losses[losses > sel.threshold]
        m = _moment_row(exceed)
        level = "-" if sel.level == 0.0 else repr(sel.level)
        thr = "-" if sel.level == 0.0 else repr(sel.threshold)
        buf.write(
            f"{name},{thr},{level},{float(exceed.min())!r},{m['n']},{m['mean']!r},"
            f"{m['median']!r},{m['stdev']!r},{m['skewness']!r},{m['kurtosis']!r},ok\n"
        )
    art.write("threshold.csv", buf.getvalue())
    return {"input": args.input, "alpha": args.alpha}


def _fit_group(losses, rows, records, args):
    out = {}
    freq_spec = LinkModelSpec("frequency", "poisson", design_columns=_BASE_COLUMNS)
    out["frequency"] = fit_poisson_regression(records, freq_spec)
    sel = tail.select_threshold(np.asarray(losses), alpha=args.alpha)
    if not sel.found:
        raise _StageError("no severity threshold passed the goodness-of-fit gate")
    u = float(sel.threshold)
    mask = np.asarray(losses) > u
    excess = np.asarray(losses)[mask] - u
    kept_rows = [r for r, m in zip(rows, mask) if m]
    if args.family == "gpd":
        sev_spec = LinkModelSpec(
            "severity", "gpd", design_columns=_BASE_COLUMNS, threshold_u=u
        )
        out["severity"] = fit_gpd_regression(excess, kept_rows, sev_spec)
    else:
        sev_spec = LinkModelSpec("severity", args.family, design_columns=_BASE_COLUMNS)
        out["severity"] = fit_severity_family_regression(excess, kept_rows, sev_spec)
    return out, sel


def _stage_fit(args, art: _Artifacts) -> dict:
    res = _load_events(args.input)
    events = res.events
    rows = encode_covariates(events)
    models: dict[str, dict] = {}

    if args.mode == "decoupled":
        by_type: dict[str, list[int]] = {}
        for i, e in enumerate(events):
            by_type.setdefault(e.risk_type.slug, []).append(i)
        for slug in sorted(by_type):
            idx = by_type[slug]
            if len(idx) < args.min_events:
                continue
            sub_events = [events[i] for i in idx]
            sub_rows = [rows[i] for i in idx]
            records = aggregate_frequency(sub_events, sub_rows)
            losses = [e.loss for e in sub_events]
            try:
                fits, sel = _fit_group(losses, sub_rows, records, args)
            except (TailRiskError, _StageError) as exc:
                art.write(f"fit_{slug}_error.txt", f"{exc}\n")
                continue
            for kind, fit in fits.items():
                art.write(f"fit_{slug}_{kind}.csv", coefficient_table_csv(fit))
            models[slug] = {k: f.to_dict() for k, f in fits.items()}
    else:
        records = aggregate_frequency(list(events), rows)
        losses = [e.loss for e in events]
        risk_types = [e.risk_type.slug for e in events]
        freq_spec = LinkModelSpec("frequency", "poisson", design_columns=_BASE_COLUMNS)
        freq_fit = fit_poisson_regression(records, freq_spec)
        if args.family == "gpd":
            sev_fit, sel = modelsel.fit_joint_model(
                losses, risk_types, rows, base_columns=_BASE_COLUMNS, alpha=args.alpha
            )
        else:
            sel = tail.select_threshold(np.asarray(losses), alpha=args.alpha)
            if not sel.found:
                raise _StageError("no pooled threshold passed the goodness-of-fit gate")
            u = float(sel.threshold)
            mask = np.asarray(losses) > u
            excess = np.asarray(losses)[mask] - u
            kept = [r for r, m in zip(rows, mask) if m]
            spec = LinkModelSpec("severity", args.family, design_columns=_BASE_COLUMNS)
            sev_fit = fit_severity_family_regression(excess, kept, spec)
        art.write("fit_all_frequency.csv", coefficient_table_csv(freq_fit))
        art.write("fit_all_severity.csv", coefficient_table_csv(sev_fit))
        models["all"] = {"frequency": freq_fit.to_dict(), "severity": sev_fit.to_dict()}

    if args.spline_df_grid:
        records = aggregate_frequency(list(events), rows)
        spec = LinkModelSpec(
            "frequency", "poisson", design_columns=_BASE_COLUMNS, time_effect="spline"
        )
        selection = select_smoothing_df(records, spec, args.spline_df_grid)
        art.write("aic_curve_frequency.csv", selection.curve_csv())
        art.write_json(
            "aic_curve_frequency.json",
            _figure_descriptor("AIC against smoothing df (frequency)", "df", "aic"),
        )
    art.write_json("models.json", {"mode": args.mode, "models": models})
    return {
        "input": args.input,
        "mode": args.mode,
        "family": args.family,
        "alpha": args.alpha,
        "min_events": args.min_events,
        "spline_df_grid": list(args.spline_df_grid or []),
    }


def _stage_vuong(args, art: _Artifacts) -> dict:
    res = _load_events(args.input)
    rows = encode_covariates(res.events)
    losses = np.asarray([e.loss for e in res.events])
    risk_types = [e.risk_type.slug for e in res.events]
    joint_fit, sel = modelsel.fit_joint_model(
        losses, risk_types, rows, base_columns=_BASE_COLUMNS, alpha=args.alpha
    )
    u = float(sel.threshold)
    mask = losses > u
    excess = losses[mask] - u
    kept_rows = [r for r, m in zip(rows, mask) if m]
    kept_types = [rt for rt, m in zip(risk_types, mask) if m]
    decoupled = modelsel.fit_decoupled_models(
        losses[mask], kept_types, kept_rows, base_columns=_BASE_COLUMNS, threshold_u=u
    )
    levels = sorted(set(kept_types))
    joint_rows = []
    for row, rt in zip(kept_rows, kept_types):
        d = dict(row.dummies)
        for lv in levels[1:]:
            d[f"RT_{lv}"] = float(rt == lv)
        joint_rows.append(CovariateRow(row.time, d))
    result = modelsel.vuong_variance_test(
        joint_fit, decoupled, excess, kept_types, joint_rows, decoupled_rows=kept_rows
    )
    art.write_json(
        "vuong.json",
        {
            "statistic": result.statistic,
            "dof": result.dof,
            "p_value": result.p_value,
            "n_obs": int(excess.size),
            "threshold": u,
        },
    )
    return {"input": args.input, "alpha": args.alpha}


def _stage_ks_table(args, art: _Artifacts) -> dict:
    res = _load_events(args.input)
    losses = np.asarray([e.loss for e in res.events])
    families = [FamilyTag(f) for f in args.families]
    pooled = modelsel.family_comparison_table(losses, families)
    art.write("ks_pooled.csv", modelsel.comparison_table_csv(pooled))
    types = [e.risk_type.label for e in res.events]
    per_type = modelsel.family_comparison_table(losses, families, risk_types=types)
    art.write("ks_by_type.csv", modelsel.comparison_table_csv(per_type))
    return {"input": args.input, "families": list(args.families)}


def _stage_rank(args, art: _Artifacts) -> dict:
    res = _load_events(args.input)
    rows = encode_covariates(res.events, include_risk_dummies=True)
    losses = [e.loss for e in res.events]
    present = [
        rt
        for rt in sorted(RiskType, key=lambda r: r.label)
        if any(r.dummies.get(risk_dummy_name(rt), 0.0) for r in rows)
    ]
    # first populated type is the baseline; the rest get indicator columns
    rt_columns = tuple(risk_dummy_name(rt) for rt in present[1:])
    full_columns = rt_columns + ("time",) + _BASE_COLUMNS
    ranked = rank.make_ranked_dataset(losses, rows, full_columns)
    ols = rank.fit_rank_ols(ranked)
    buf = io.StringIO()
    buf.write("covariate,coefficient,standard_error,t_ratio\n")
    for name, b, se, t in zip(ols.names, ols.coefficients, ols.standard_errors, ols.t_ratios):
        buf.write(f"{name},{b!r},{se!r},{t!r}\n")
    art.write("rank_regression.csv", buf.getvalue())

    curve = rank.concordance_curve(ranked.ranks, ols.fitted)
    art.write("concordance.csv", rank.concordance_csv(curve))
    art.write_json(
        "concordance.json",
        _figure_descriptor(
            "concordance curve (rank-ordered cumulative share)",
            "share of observations",
            "cumulative rank share",
        ),
    )

    if args.rga_test:
        buf = io.StringIO()
        buf.write("covariate,rga,s_value,p_s_value,result,s_class\n")
        for col in full_columns:
            restricted = tuple(c for c in full_columns if c != col)
            outcome = rank.rga_significance_test(
                losses, rows, full_columns, restricted,
                d=args.d, subsample_size=args.subsample, seed=args.seed, refit=False,
            )
            buf.write(outcome.to_csv_row(col) + "\n")
        art.write("rga_tests.csv", buf.getvalue())
    return {
        "input": args.input,
        "rga_test": bool(args.rga_test),
        "d": args.d,
        "subsample": args.subsample,
        "seed": args.seed,
    }


def _load_models(path: str) -> dict:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return {
        group: {kind: RegressionFit.from_dict(fit) for kind, fit in fits.items()}
        for group, fits in payload["models"].items()
    }


def _load_profile(path: str) -> tuple[dict, int, list[int], str | None]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    dummies = {k: float(v) for k, v in payload["dummies"].items()}
    start_year = int(payload.get("start_year", 2008))
    years = [int(y) for y in payload["years"]]
    return dummies, start_year, years, payload.get("risk_type")


def _profile_dummies(dummies: dict, risk_type: str | None, fits: dict) -> dict:
    """Profile dummies extended to every design column the fits expect.

    Unnamed columns default to 0 (the baseline category); a risk type in the
    profile switches on its indicator when the model carries one.
    """
    out = dict(dummies)
    for fit in fits.values():
        for col in fit.tables[next(iter(fit.tables))].names:
            if col in ("intercept", "time") or col.startswith("time_s"):
                continue
            out.setdefault(col, 0.0)
    if risk_type:
        slug = RiskType(risk_type).slug if risk_type in {r.value for r in RiskType} else risk_type
        key = f"RT_{slug}"
        if key in out:
            out[key] = 1.0
    return out


def _stage_var(args, art: _Artifacts) -> dict:
    models = _load_models(args.model)
    if args.group not in models:
        raise _StageError(f"group {args.group!r} not in {sorted(models)}")
    fits = models[args.group]
    dummies, start_year, years, risk_type = _load_profile(args.profile)
    dummies = _profile_dummies(dummies, risk_type, fits)
    buf = io.StringIO()
    buf.write("year,lambda,mu,tau,var,log_var,correction_applied,status\n")
    for year in years:
        row = CovariateRow(float(year - start_year), dummies)
        lam = predict_parameters(fits["frequency"], row)["lambda"]
        sev = predict_parameters(fits["severity"], row)
        mu, tau = sev["mu"], sev["tau"]
        u = fits["severity"].spec.threshold_u or 0.0
        try:
            inputs = capital.SlaInputs(args.alpha, lam, GpdParams(mu, tau), u)
            sla = capital.sla_var(inputs, allow_uncorrected=True)
            buf.write(
                f"{year},{lam!r},{mu!r},{tau!r},{sla.value!r},{math.log(sla.value)!r},"
                f"{int(sla.correction_applied)},ok\n"
            )
        except TailRiskError as exc:
            buf.write(f"{year},{lam!r},{mu!r},{tau!r},,,,{exc}\n")
    art.write("var_trajectory.csv", buf.getvalue())
    art.write_json(
        "var_trajectory.json",
        _figure_descriptor("aggregate VaR trajectory", "year", "log VaR", log_y=True),
    )
    return {
        "model": args.model,
        "profile": args.profile,
        "group": args.group,
        "alpha": args.alpha,
    }


def _parse_utilities(tokens) -> list[insure.UtilitySpec]:
    out = []
    for tok in tokens:
        if tok == "log":
            out.append(insure.UtilitySpec("log"))
        elif tok.startswith("crra"):
            out.append(insure.UtilitySpec("crra", float(tok[4:])))
        else:
            raise _StageError(f"unknown utility {tok!r} (use log or crra<gamma>)")
    return out


def _stage_premium(args, art: _Artifacts) -> dict:
    models = _load_models(args.model)
    if args.group not in models:
        raise _StageError(f"group {args.group!r} not in {sorted(models)}")
    fits = models[args.group]
    dummies, start_year, years, risk_type = _load_profile(args.profile)
    dummies = _profile_dummies(dummies, risk_type, fits)
    utilities = _parse_utilities(args.utilities)
    case = insure.InsuranceCase(
        wealth_w=args.w,
        cover_fraction_k=args.k,
        lam=1.0,
        severity=GpdParams(1.0, 1.0),
    )
    series = insure.premium_timeseries(
        fits["frequency"],
        fits["severity"],
        CovariateRow(0.0, dummies),
        years,
        start_year,
        case,
        utilities,
        n_sims=args.n_sims,
        seed=args.seed,
    )
    art.write("premiums.csv", insure.premium_series_csv(series))
    art.write_json(
        "premiums.json",
        _figure_descriptor("premiums and relative wealth", "year", "log scale", log_y=True),
    )
    return {
        "model": args.model,
        "profile": args.profile,
        "group": args.group,
        "w": args.w,
        "k": args.k,
        "utilities": list(args.utilities),
        "n_sims": args.n_sims,
        "seed": args.seed,
    }


def _stage_simulate(args, art: _Artifacts) -> dict:
    payload = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    if args.seed is not None:
        payload["seed"] = args.seed
    spec = SyntheticSpec.from_dict(payload)
    csv_text, truth = generate_synthetic(spec)
    art.write("synthetic_events.csv", csv_text)
    art.write("synthetic_truth.json", truth)
    return {"spec": args.spec, "seed": spec.seed}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tailrisk",
        description="Heavy-tailed event-loss analysis: tail diagnostics, "
        "frequency/severity regression, VaR and insurance pricing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kw):
        p = sub.add_parser(name, **kw)
        p.set_defaults(fn=fn)
        p.add_argument("--out", required=True, help="output directory")
        return p

    p = add("ingest", _stage_ingest, help="parse and normalise a loss CSV")
    p.add_argument("--input", required=True)

    p = add("describe", _stage_describe, help="descriptive statistics per risk type")
    p.add_argument("--input", required=True)

    p = add("hill", _stage_hill, help="tail-index curves over the order-statistic depth")
    p.add_argument("--input", required=True)
    p.add_argument("--k-min", type=int, default=10)
    p.add_argument("--k-max", type=int, default=None)
    p.add_argument("--by-risk-type", action="store_true")

    p = add("threshold", _stage_threshold, help="per-type threshold selection table")
    p.add_argument("--input", required=True)
    p.add_argument("--alpha", type=float, default=0.05)

    p = add("fit", _stage_fit, help="frequency and severity regressions")
    p.add_argument("--input", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--joint", dest="mode", action="store_const", const="joint")
    group.add_argument("--decoupled", dest="mode", action="store_const", const="decoupled")
    p.set_defaults(mode="decoupled")
    p.add_argument("--family", choices=["gpd", "lognormal", "loglogistic"], default="gpd")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--min-events", type=int, default=30,
                   help="skip risk types with fewer events in decoupled mode")
    p.add_argument("--spline-df-grid", type=float, nargs="*", default=None)

    p = add("vuong", _stage_vuong, help="joint vs decoupled closeness test")
    p.add_argument("--input", required=True)
    p.add_argument("--alpha", type=float, default=0.05)

    p = add("ks-table", _stage_ks_table, help="severity-family goodness-of-fit tables")
    p.add_argument("--input", required=True)
    p.add_argument(
        "--families",
        nargs="*",
        default=["exponential", "gamma", "gpd", "log_logistic", "log_normal", "weibull"],
    )

    p = add("rank", _stage_rank, help="rank regression and accuracy significance tests")
    p.add_argument("--input", required=True)
    p.add_argument("--rga-test", action="store_true")
    p.add_argument("--d", type=int, default=5000)
    p.add_argument("--subsample", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)

    p = add("var", _stage_var, help="VaR trajectory from fitted models")
    p.add_argument("--model", required=True, help="models.json from the fit stage")
    p.add_argument("--profile", required=True, help="covariate profile JSON")
    p.add_argument("--group", default="all")
    p.add_argument("--alpha", type=float, default=0.999)

    p = add("premium", _stage_premium, help="premium / pool-size series from fitted models")
    p.add_argument("--model", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--group", default="all")
    p.add_argument("--w", type=float, default=1000.0, help="insured wealth (USD millions)")
    p.add_argument("--k", type=float, default=0.1, help="per-event cover cap as a wealth share")
    p.add_argument("--utilities", nargs="*", default=["log", "crra0.2", "crra0.7"])
    p.add_argument("--n-sims", type=int, default=100_000)
    p.add_argument("--seed", type=int, required=True)

    p = add("simulate", _stage_simulate, help="synthetic events with a truth record")
    p.add_argument("--spec", required=True, help="SyntheticSpec JSON")
    p.add_argument("--seed", type=int, default=None, help="overrides the spec's seed")

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    art = _Artifacts(Path(args.out))
    try:
        config = args.fn(args, art)
    except FileNotFoundError as exc:
        art.cleanup()
        print(f"error: {args.command}: input error: {exc}", file=sys.stderr)
        return 2
    except (_StageError, TailRiskError, ValueError, KeyError) as exc:
        art.cleanup()
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return 1
    art.manifest(args.command, config)
    return 0


if __name__ == "__main__":
    sys.exit(main())
