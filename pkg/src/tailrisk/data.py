"""Loss-event data model, CSV ingestion, covariate encoding and a synthetic
generator with known ground truth.

CSV schema (UTF-8, comma separated, header required)::

    company_id,event_date,loss_musd,risk_type,revenue_usd,employees,country_iso,naics_sector,ml_flag,mc_flag

``event_date`` is ISO-8601; ``country_iso`` "US" maps to ``in_usa``;
``naics_sector`` is one of FIN/HEALTH/OTHER; ``ml_flag``/``mc_flag`` are 0/1.
Monetary losses are in USD millions throughout.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass
from datetime import date
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DegenerateDataError, DomainError, InsufficientDataError

__all__ = [
    "RiskType",
    "Sector",
    "LossEvent",
    "CovariateRow",
    "ParseResult",
    "RowError",
    "parse_csv",
    "events_to_csv",
    "encode_covariates",
    "FrequencyRecord",
    "aggregate_frequency",
    "SyntheticSpec",
    "SyntheticPanel",
    "simulate_panel",
    "generate_synthetic",
    "DUMMY_COLUMNS",
    "risk_dummy_name",
]


class RiskType(Enum):
    """The fourteen event categories of the loss taxonomy."""

    PRIVACY_UNAUTHORIZED_CONTACT = "Privacy - Unauthorized Contact or Disclosure"
    PRIVACY_UNAUTHORIZED_DATA_COLLECTION = "Privacy - Unauthorized Data Collection"
    DATA_PHYSICALLY_LOST_OR_STOLEN = "Data - Physically Lost or Stolen"
    DATA_MALICIOUS_BREACH = "Data - Malicious Breach"
    DATA_UNINTENTIONAL_DISCLOSURE = "Data - Unintentional Disclosure"
    IDENTITY_FRAUDULENT_USE = "Identity - Fraudulent Use/Account Access"
    INDUSTRIAL_CONTROLS = "Industrial Controls and Operations"
    NETWORK_WEBSITE_DISRUPTION = "Network/Website Disruption"
    PHISHING_SPOOFING = "Phishing, Spoofing, Social Engineering"
    SKIMMING_PHYSICAL_TAMPERING = "Skimming, Physical Tampering"
    IT_CONFIGURATION_ERRORS = "IT - Configuration/Implementation Errors"
    IT_PROCESSING_ERRORS = "IT - Processing Errors"
    CYBER_EXTORTION = "Cyber Extortion"
    UNDETERMINED_OTHER = "Undetermined/Other"

    @property
    def label(self) -> str:
        return self.value

    @property
    def slug(self) -> str:
        return self.name.lower()


def _normalize_label(text: str) -> str:
    # case-insensitive match on canonical names; unicode dashes and spacing
    # variations are tolerated
    text = text.replace("–", "-").replace("—", "-").replace("‐", "-")
    text = re.sub(r"\s*-\s*", " - ", text)
    text = re.sub(r"\s+", " ", text).strip().casefold()
    return text


_RISK_LOOKUP = {_normalize_label(rt.value): rt for rt in RiskType}
_RISK_LOOKUP.update({rt.name.casefold(): rt for rt in RiskType})


def parse_risk_type(text: str) -> RiskType:
    key = _normalize_label(text)
    if key in _RISK_LOOKUP:
        return _RISK_LOOKUP[key]
    raise DomainError(f"unknown risk type {text!r}")


class Sector(Enum):
    FINANCE = "FIN"
    HEALTHCARE = "HEALTH"
    OTHER = "OTHER"


@dataclass(frozen=True)
class LossEvent:
    company_id: str
    event_date: date
    loss: float  # USD millions, > 0
    risk_type: RiskType
    revenue: float  # USD, > 0
    employees: int  # > 0
    in_usa: bool
    sector: Sector
    multi_loss_same_company: bool
    multi_company: bool

    def __post_init__(self):
        if not (self.loss > 0.0):
            raise DomainError(f"loss must be positive, got {self.loss}")
        if not (self.revenue > 0.0):
            raise DomainError(f"revenue must be positive, got {self.revenue}")
        if self.employees <= 0:
            raise DomainError(f"employees must be positive, got {self.employees}")


# design-dummy vocabulary shared by the regression modules
DUMMY_COLUMNS = (
    "R_medium",
    "R_big",
    "E_medium",
    "E_big",
    "L_USA",
    "B_financial",
    "B_health",
    "ML",
    "MC",
)


def risk_dummy_name(rt: RiskType) -> str:
    return f"RT_{rt.slug}"


@dataclass(frozen=True)
class CovariateRow:
    """One encoded observation: time in years since window start plus dummies."""

    time: float
    dummies: Mapping[str, float]

    def value(self, column: str) -> float:
        if column == "time":
            return self.time
        try:
            return float(self.dummies[column])
        except KeyError:
            raise DomainError(f"column {column!r} missing from covariate row") from None


@dataclass(frozen=True)
class RowError:
    row_number: int
    reason: str


@dataclass(frozen=True)
class ParseResult:
    events: tuple[LossEvent, ...]
    errors: tuple[RowError, ...]


_REQUIRED_COLUMNS = (
    "company_id",
    "event_date",
    "loss_musd",
    "risk_type",
    "revenue_usd",
    "employees",
    "country_iso",
    "naics_sector",
    "ml_flag",
    "mc_flag",
)


def _parse_row(row: Mapping[str, str]) -> LossEvent:
    try:
        event_date = date.fromisoformat(row["event_date"].strip())
    except ValueError:
        raise DomainError(f"unparseable date {row['event_date']!r}") from None
    loss = float(row["loss_musd"])
    if not (loss > 0.0):
        raise DomainError("nonpositive loss")
    risk_type = parse_risk_type(row["risk_type"])
    sector_text = row["naics_sector"].strip().upper()
    try:
        sector = Sector(sector_text)
    except ValueError:
        raise DomainError(f"unknown sector {row['naics_sector']!r}") from None
    flag = {"0": False, "1": True}
    ml, mc = row["ml_flag"].strip(), row["mc_flag"].strip()
    if ml not in flag or mc not in flag:
        raise DomainError("ml_flag/mc_flag must be 0 or 1")
    return LossEvent(
        company_id=row["company_id"].strip(),
        event_date=event_date,
        loss=loss,
        risk_type=risk_type,
        revenue=float(row["revenue_usd"]),
        employees=int(row["employees"]),
        in_usa=row["country_iso"].strip().upper() == "US",
        sector=sector,
        multi_loss_same_company=flag[ml],
        multi_company=flag[mc],
    )


def parse_csv(source) -> ParseResult:
    """Parse events from a path or text stream; bad rows become ``RowError``s.

    Row order is preserved; every input row either yields an event or is
    reported with its (1-based, header excluded) row number and a reason.
    """
    if isinstance(source, (str, bytes)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return parse_csv(fh)
    reader = csv.DictReader(source)
    if reader.fieldnames is None:
        raise DomainError("empty input: missing header row")
    missing = [c for c in _REQUIRED_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise DomainError(f"missing column(s): {', '.join(missing)}")
    events: list[LossEvent] = []
    errors: list[RowError] = []
    for i, row in enumerate(reader, start=1):
        try:
            events.append(_parse_row(row))
        except (DomainError, ValueError, KeyError) as exc:
            errors.append(RowError(i, str(exc)))
    return ParseResult(tuple(events), tuple(errors))


def events_to_csv(events: Iterable[LossEvent]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_REQUIRED_COLUMNS)
    for e in events:
        writer.writerow(
            [
                e.company_id,
                e.event_date.isoformat(),
                repr(e.loss),
                e.risk_type.label,
                repr(e.revenue),
                e.employees,
                "US" if e.in_usa else "XX",
                e.sector.value,
                int(e.multi_loss_same_company),
                int(e.multi_company),
            ]
        )
    return buf.getvalue()


def _years_since(d: date, start: date) -> float:
    # integral at Jan 1 anniversaries: whole years plus the fraction of the
    # current year elapsed
    year_len = (date(d.year + 1, 1, 1) - date(d.year, 1, 1)).days
    frac = (d - date(d.year, 1, 1)).days / year_len
    return (d.year - start.year) + frac - (start - date(start.year, 1, 1)).days / (
        (date(start.year + 1, 1, 1) - date(start.year, 1, 1)).days
    )


def _size_class(value: float, p33: float, p66: float) -> str:
    # boundary ties go to the lower class
    if value <= p33:
        return "small"
    if value <= p66:
        return "medium"
    return "big"


def encode_covariates(
    events: Sequence[LossEvent],
    include_risk_dummies: bool = False,
    interactions: Sequence[tuple[str, str]] = (),
) -> list[CovariateRow]:
    """Encode events into regression dummies.

    Revenue and employee classes come from the empirical 33rd/66th percentiles
    of the input; contagion flags are collapsed to the mutually exclusive
    classes one-shot / ML / MC with precedence MC > ML.  Requested interaction
    columns are products of the named dummies, materialised as
    ``"<a>:<b>"``.
    """
    if len(events) == 0:
        raise InsufficientDataError("cannot encode an empty event sequence")
    start = min(e.event_date for e in events)
    revenues = np.array([e.revenue for e in events], dtype=float)
    employees = np.array([e.employees for e in events], dtype=float)
    r33, r66 = np.percentile(revenues, [33.0, 66.0])
    e33, e66 = np.percentile(employees, [33.0, 66.0])

    rows: list[CovariateRow] = []
    for e in events:
        r_class = _size_class(e.revenue, r33, r66)
        e_class = _size_class(float(e.employees), e33, e66)
        mc = bool(e.multi_company)
        ml = bool(e.multi_loss_same_company) and not mc
        dummies: dict[str, float] = {
            "R_medium": float(r_class == "medium"),
            "R_big": float(r_class == "big"),
            "E_medium": float(e_class == "medium"),
            "E_big": float(e_class == "big"),
            "L_USA": float(e.in_usa),
            "B_financial": float(e.sector is Sector.FINANCE),
            "B_health": float(e.sector is Sector.HEALTHCARE),
            "ML": float(ml),
            "MC": float(mc),
        }
        if include_risk_dummies:
            for rt in RiskType:
                dummies[risk_dummy_name(rt)] = float(e.risk_type is rt)
        for a, b in interactions:
            if a not in dummies or b not in dummies:
                raise DomainError(f"interaction ({a}, {b}) names an unknown dummy")
            dummies[f"{a}:{b}"] = dummies[a] * dummies[b]
        rows.append(CovariateRow(time=_years_since(e.event_date, start), dummies=dummies))
    return rows


@dataclass(frozen=True)
class FrequencyRecord:
    company_id: str
    year: int
    count: int
    row: CovariateRow


def aggregate_frequency(
    events: Sequence[LossEvent], rows: Sequence[CovariateRow]
) -> list[FrequencyRecord]:
    """Company-year event counts with that year's covariates.

    Within a company-year the covariates of the first event win.  Zero-count
    records are emitted for the years inside each company's observed span
    (first to last event year), carrying forward the most recent covariates
    with the time column advanced; there is no firm census, so years outside
    the span are not invented.
    """
    if len(events) != len(rows):
        raise DomainError("events and rows must be aligned")
    if len(events) == 0:
        raise InsufficientDataError("cannot aggregate an empty event sequence")
    start = min(e.event_date for e in events)
    by_company: dict[str, dict[int, list[tuple[LossEvent, CovariateRow]]]] = {}
    for e, r in zip(events, rows):
        by_company.setdefault(e.company_id, {}).setdefault(e.event_date.year, []).append((e, r))

    records: list[FrequencyRecord] = []
    for company in sorted(by_company):
        years = by_company[company]
        span = range(min(years), max(years) + 1)
        last_row: CovariateRow | None = None
        for year in span:
            if year in years:
                pairs = sorted(years[year], key=lambda er: er[0].event_date)
                first_row = pairs[0][1]
                records.append(FrequencyRecord(company, year, len(pairs), first_row))
                last_row = first_row
            else:
                assert last_row is not None
                t = _years_since(date(year, 1, 1), start)
                records.append(
                    FrequencyRecord(company, year, 0, CovariateRow(t, dict(last_row.dummies)))
                )
    return records


# ---------------------------------------------------------------------------
# Synthetic data with known ground truth
# ---------------------------------------------------------------------------

_CLASS_VALUES = {
    "revenue": {"small": 1.0e6, "medium": 1.0e7, "big": 1.0e8},
    "employees": {"small": 10, "medium": 100, "big": 1000},
}


@dataclass(frozen=True)
class SyntheticSpec:
    """Ground-truth link-function coefficients and panel dimensions.

    Coefficient mappings are keyed by ``"intercept"``, ``"time"`` and dummy
    names from :data:`DUMMY_COLUMNS`.  Class probabilities lean small-heavy so
    percentile re-encoding of the written CSV reproduces the generating
    classes exactly.
    """

    lambda_coefficients: Mapping[str, float]
    mu_coefficients: Mapping[str, float]
    tau_coefficients: Mapping[str, float]
    n_companies: int
    n_years: int
    threshold: float
    seed: int
    size_probabilities: tuple[float, float, float] = (0.45, 0.35, 0.20)
    start_year: int = 2008

    def __post_init__(self):
        if self.n_companies <= 0 or self.n_years <= 0:
            raise DomainError("n_companies and n_years must be positive")
        if self.threshold < 0.0:
            raise DomainError("threshold must be >= 0")
        if abs(sum(self.size_probabilities) - 1.0) > 1e-9:
            raise DomainError("size_probabilities must sum to 1")
        for name, coeffs in (
            ("lambda", self.lambda_coefficients),
            ("mu", self.mu_coefficients),
            ("tau", self.tau_coefficients),
        ):
            for key, val in coeffs.items():
                if key not in ("intercept", "time") and key not in DUMMY_COLUMNS:
                    raise DomainError(f"{name} coefficient references unknown column {key!r}")
                if not math.isfinite(val):
                    raise DomainError(f"{name} coefficient {key!r} must be finite")

    def to_dict(self) -> dict:
        return {
            "lambda_coefficients": dict(self.lambda_coefficients),
            "mu_coefficients": dict(self.mu_coefficients),
            "tau_coefficients": dict(self.tau_coefficients),
            "n_companies": self.n_companies,
            "n_years": self.n_years,
            "threshold": self.threshold,
            "seed": self.seed,
            "size_probabilities": list(self.size_probabilities),
            "start_year": self.start_year,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticSpec":
        return cls(
            lambda_coefficients=dict(d["lambda_coefficients"]),
            mu_coefficients=dict(d["mu_coefficients"]),
            tau_coefficients=dict(d["tau_coefficients"]),
            n_companies=int(d["n_companies"]),
            n_years=int(d["n_years"]),
            threshold=float(d["threshold"]),
            seed=int(d["seed"]),
            size_probabilities=tuple(d.get("size_probabilities", (0.45, 0.35, 0.20))),
            start_year=int(d.get("start_year", 2008)),
        )


@dataclass
class SyntheticPanel:
    """In-memory generation output: the exact designs the truth used."""

    spec: SyntheticSpec
    frequency: list[FrequencyRecord]
    severities: np.ndarray  # exceedances over the threshold (excess values)
    severity_rows: list[CovariateRow]
    events: list[LossEvent]


def _linear_predictor(coeffs: Mapping[str, float], row: CovariateRow) -> float:
    eta = coeffs.get("intercept", 0.0) + coeffs.get("time", 0.0) * row.time
    for key, val in coeffs.items():
        if key in ("intercept", "time"):
            continue
        eta += val * row.dummies[key]
    if abs(eta) > 50.0:
        raise DomainError(f"linear predictor {eta:.1f} implies a degenerate parameter")
    return eta


def simulate_panel(spec: SyntheticSpec) -> SyntheticPanel:
    """Generate a company-year panel from the ground-truth link functions.

    Counts are Poisson with a log link; each exceedance is ``threshold`` plus
    a GPD draw with log links on scale and tail.  Deterministic per seed.
    """
    rng = np.random.default_rng(spec.seed)
    p_small, p_medium, p_big = spec.size_probabilities
    classes = ("small", "medium", "big")
    sectors = (Sector.FINANCE, Sector.HEALTHCARE, Sector.OTHER)

    frequency: list[FrequencyRecord] = []
    severities: list[float] = []
    severity_rows: list[CovariateRow] = []
    events: list[LossEvent] = []

    for c in range(spec.n_companies):
        company = f"C{c:06d}"
        r_class = classes[rng.choice(3, p=(p_small, p_medium, p_big))]
        e_class = classes[rng.choice(3, p=(p_small, p_medium, p_big))]
        in_usa = bool(rng.random() < 0.6)
        sector = sectors[rng.choice(3, p=(0.25, 0.25, 0.5))]
        contagion = rng.choice(3, p=(0.7, 0.15, 0.15))  # none / ML / MC
        dummies = {
            "R_medium": float(r_class == "medium"),
            "R_big": float(r_class == "big"),
            "E_medium": float(e_class == "medium"),
            "E_big": float(e_class == "big"),
            "L_USA": float(in_usa),
            "B_financial": float(sector is Sector.FINANCE),
            "B_health": float(sector is Sector.HEALTHCARE),
            "ML": float(contagion == 1),
            "MC": float(contagion == 2),
        }
        for year_idx in range(spec.n_years):
            row = CovariateRow(time=float(year_idx), dummies=dict(dummies))
            lam = math.exp(_linear_predictor(spec.lambda_coefficients, row))
            count = int(rng.poisson(lam))
            frequency.append(
                FrequencyRecord(company, spec.start_year + year_idx, count, row)
            )
            if count == 0:
                continue
            mu = math.exp(_linear_predictor(spec.mu_coefficients, row))
            tau = math.exp(_linear_predictor(spec.tau_coefficients, row))
            u = rng.random(count)
            excess = mu * np.expm1(-np.log1p(-u) / tau)
            for x in excess:
                severities.append(float(x))
                severity_rows.append(row)
                events.append(
                    LossEvent(
                        company_id=company,
                        event_date=date(spec.start_year + year_idx, 1, 1),
                        loss=spec.threshold + float(x),
                        risk_type=list(RiskType)[int(rng.integers(len(RiskType)))],
                        revenue=_CLASS_VALUES["revenue"][r_class],
                        employees=int(_CLASS_VALUES["employees"][e_class]),
                        in_usa=in_usa,
                        sector=sector,
                        multi_loss_same_company=contagion == 1,
                        multi_company=contagion == 2,
                    )
                )
    return SyntheticPanel(
        spec=spec,
        frequency=frequency,
        severities=np.asarray(severities, dtype=float),
        severity_rows=severity_rows,
        events=events,
    )


def _check_class_reproduction(panel: SyntheticPanel) -> None:
    # percentile re-encoding of the written events must reproduce the
    # generating size classes; the representative class values are separated
    # by an order of magnitude, so this only fails for extreme class mixes
    rows = encode_covariates(panel.events)
    for event_row, truth_row in zip(rows, panel.severity_rows):
        for col in ("R_medium", "R_big", "E_medium", "E_big"):
            if event_row.dummies[col] != truth_row.dummies[col]:
                raise DegenerateDataError(
                    f"synthetic size classes not reproducible from the CSV ({col}); "
                    "adjust size_probabilities or coefficients"
                )


def generate_synthetic(spec: SyntheticSpec) -> tuple[str, str]:
    """Events CSV plus a JSON truth record mirroring the spec field-for-field."""
    panel = simulate_panel(spec)
    if panel.events:
        _check_class_reproduction(panel)
    truth = json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n"
    return events_to_csv(panel.events), truth
