"""Unit-month panel data model: loading, validation, splitting, synthesis.

The panel is a long-format table with one row per (unit, month) holding a
non-negative integer fatality count and an arbitrary set of real-valued
covariate columns. Months are global integer indices, so horizon arithmetic
is plain integer arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataError, ValidationError

MANDATORY_COLUMNS = ("unit_id", "month_id", "fatalities")

# Units shorter than this are flagged (not dropped) by validate_panel.
MIN_COMFORTABLE_MONTHS = 24


class PanelDataset:
    """Immutable long-format panel of fatality counts and covariates.

    Rows are sorted by (unit_id, month_id). Covariate cells may be NaN;
    imputation happens downstream in the feature pipeline, never here.
    """

    def __init__(self, df: pd.DataFrame, covariate_groups: dict[str, str] | None = None):
        for col in MANDATORY_COLUMNS:
            if col not in df.columns:
                raise DataError(f"panel is missing mandatory column {col!r}")
        df = df.copy()
        df["unit_id"] = df["unit_id"].astype(str)
        df["month_id"] = df["month_id"].astype(np.int64)
        fat = df["fatalities"].to_numpy()
        if not np.all(fat == np.floor(fat)):
            raise DataError("fatalities must be integers")
        df["fatalities"] = df["fatalities"].astype(np.int64)
        if (df["fatalities"] < 0).any():
            raise DataError("fatalities must be non-negative")
        dup = df.duplicated(subset=["unit_id", "month_id"])
        if dup.any():
            pair = df.loc[dup.idxmax(), ["unit_id", "month_id"]].tolist()
            raise DataError(f"duplicate (unit, month) pair: {tuple(pair)}")
        df = df.sort_values(["unit_id", "month_id"], kind="mergesort").reset_index(drop=True)
        self._df = df
        self.covariate_columns = [c for c in df.columns if c not in MANDATORY_COLUMNS]
        for c in self.covariate_columns:
            self._df[c] = self._df[c].astype(np.float64)
        self.covariate_groups = dict(covariate_groups) if covariate_groups else {}
        unknown = set(self.covariate_groups) - set(self.covariate_columns)
        if unknown:
            raise DataError(f"schema names covariates absent from the panel: {sorted(unknown)}")

    @property
    def df(self) -> pd.DataFrame:
        # defensive copy: PanelDataset is immutable after construction
        return self._df.copy()

    @property
    def frame(self) -> pd.DataFrame:
        # read-only view for internal use; callers must not mutate
        return self._df

    @property
    def units(self) -> list[str]:
        return list(dict.fromkeys(self._df["unit_id"]))

    @property
    def month_range(self) -> tuple[int, int]:
        m = self._df["month_id"]
        return int(m.min()), int(m.max())

    def __len__(self) -> int:
        return len(self._df)

    def unit_frame(self, unit_id: str) -> pd.DataFrame:
        sub = self._df[self._df["unit_id"] == str(unit_id)]
        if sub.empty:
            raise DataError(f"unknown unit {unit_id!r}")
        return sub

    def unit_fatalities(self, unit_id: str) -> np.ndarray:
        return self.unit_frame(unit_id)["fatalities"].to_numpy()

    def equals(self, other: "PanelDataset") -> bool:
        return self._df.equals(other._df)


@dataclass(frozen=True)
class SplitSpec:
    train_end_month: int
    forecast_start_month: int
    horizon: int

    def __post_init__(self):
        if self.train_end_month >= self.forecast_start_month:
            raise ValidationError(
                "train_end_month must precede forecast_start_month "
                f"({self.train_end_month} >= {self.forecast_start_month})"
            )
        if self.horizon < 1:
            raise ValidationError(f"horizon must be >= 1, got {self.horizon}")

    @property
    def forecast_months(self) -> range:
        return range(self.forecast_start_month, self.forecast_start_month + self.horizon)


@dataclass
class ValidationReport:
    gaps: dict[str, list[int]] = field(default_factory=dict)
    missing_fractions: dict[str, float] = field(default_factory=dict)
    constant_columns: list[str] = field(default_factory=list)
    short_units: list[str] = field(default_factory=list)
    issues: list[str] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.issues


def load_panel(path, covariate_groups: dict[str, str] | None = None) -> PanelDataset:
    """Read a panel CSV (unit_id, month_id, fatalities, covariates...).

    Empty covariate cells become NaN. Raises DataError on missing mandatory
    columns, non-integer or negative fatalities, or duplicate keys.
    """
    try:
        df = pd.read_csv(path, dtype={"unit_id": str}, float_precision="round_trip")
    except FileNotFoundError as e:
        raise DataError(f"panel file not found: {path}") from e
    except ValueError as e:
        raise DataError(f"cannot parse panel file {path}: {e}") from e
    for col in MANDATORY_COLUMNS:
        if col not in df.columns:
            raise DataError(f"panel file {path} is missing column {col!r}")
    if df["fatalities"].isna().any():
        raise DataError("fatalities column contains missing values")
    return PanelDataset(df, covariate_groups=covariate_groups)


def write_panel(panel: PanelDataset, path) -> None:
    """Write the panel back to CSV; round-trips through load_panel.

    Floats use shortest round-trip repr so a write/load cycle is lossless.
    """
    panel.frame.to_csv(path, index=False, na_rep="", float_format=lambda v: repr(float(v)))


def validate_panel(panel: PanelDataset) -> ValidationReport:
    """Report-only quality checks: month gaps, missingness, degenerate columns."""
    report = ValidationReport()
    for unit in panel.units:
        months = panel.unit_frame(unit)["month_id"].to_numpy()
        missing = sorted(set(range(int(months[0]), int(months[-1]) + 1)) - set(months.tolist()))
        if missing:
            report.gaps[unit] = missing
            report.issues.append(f"unit {unit}: missing months {missing}")
        if len(months) < MIN_COMFORTABLE_MONTHS:
            report.short_units.append(unit)
            report.issues.append(f"unit {unit}: only {len(months)} observed months")
    for col in panel.covariate_columns:
        values = panel.frame[col]
        frac = float(values.isna().mean())
        report.missing_fractions[col] = frac
        if frac > 0:
            report.issues.append(f"covariate {col}: {frac:.2%} missing")
        observed = values.dropna()
        if len(observed) > 0 and observed.nunique() == 1:
            report.constant_columns.append(col)
            report.issues.append(f"covariate {col}: constant")
    return report


def split_train_eval(panel: PanelDataset, spec: SplitSpec) -> tuple[PanelDataset, PanelDataset]:
    """Partition the panel into a training window and an evaluation window.

    Train keeps months <= train_end_month; eval keeps the spec's forecast
    months. Raises DataError if either window falls outside the panel.
    """
    first, last = panel.month_range
    if spec.train_end_month < first:
        raise DataError("training window is empty: train_end_month precedes the panel")
    eval_end = spec.forecast_start_month + spec.horizon - 1
    if eval_end > last:
        raise DataError(
            f"forecast window [{spec.forecast_start_month}, {eval_end}] "
            f"extends past the panel's last month {last}"
        )
    df = panel.frame
    train = df[df["month_id"] <= spec.train_end_month]
    mask = (df["month_id"] >= spec.forecast_start_month) & (df["month_id"] <= eval_end)
    eval_df = df[mask]
    if train.empty:
        raise DataError("training window contains no rows")
    if eval_df.empty:
        raise DataError("evaluation window contains no rows")
    groups = panel.covariate_groups
    return PanelDataset(train, covariate_groups=groups), PanelDataset(eval_df, covariate_groups=groups)


@dataclass
class SynthConfig:
    """Generator settings for a synthetic panel with OMM-style dynamics.

    Transitions follow the four-state escalation machine: a zero-fatality
    month followed by fatalities is an escalation, persistent fatalities
    are war, and so on. ``signal_strength`` shifts the escalation logit by
    that many units per standard deviation of the planted signal column.
    """

    n_units: int = 50
    n_months: int = 120
    p_escalate: float = 0.05
    p_escalation_to_war: float = 0.6
    p_war_continue: float = 0.8
    p_reescalate: float = 0.3
    escalation_fatality_mean: float = 8.0
    war_fatality_mean: float = 40.0
    signal_strength: float = 0.0
    signal_rho: float = 0.9
    group_sizes: dict[str, int] = field(
        default_factory=lambda: {
            "political": 3,
            "violence": 3,
            "economy": 3,
            "military": 2,
            "demographics": 2,
            "environment": 2,
            "neighborhood": 3,
        }
    )
    first_month: int = 0

    def __post_init__(self):
        for name in ("p_escalate", "p_escalation_to_war", "p_war_continue", "p_reescalate"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ValidationError(f"{name} must be in [0, 1], got {p}")
        if self.escalation_fatality_mean < 1 or self.war_fatality_mean < 1:
            raise ValidationError("per-state fatality means must be >= 1")
        if not (0.0 <= self.signal_rho < 1.0):
            raise ValidationError(f"signal_rho must be in [0, 1), got {self.signal_rho}")

    @property
    def signal_column(self) -> str:
        first_group = next(iter(self.group_sizes))
        return f"{first_group}_signal"

    def covariate_schema(self) -> dict[str, str]:
        schema = {}
        for group, size in self.group_sizes.items():
            for i in range(1, size + 1):
                schema[f"{group}_{i}"] = group
        first_group = next(iter(self.group_sizes))
        schema[self.signal_column] = first_group
        return schema


def _escalation_prob(base: float, beta: float, signal: float) -> float:
    if beta == 0.0 or base in (0.0, 1.0):
        return base
    logit = math.log(base / (1.0 - base)) + beta * signal
    return 1.0 / (1.0 + math.exp(-logit))


def synth_panel(config: SynthConfig, seed: int) -> PanelDataset:
    """Generate a deterministic synthetic panel from the four-state machine.

    Every unit starts at peace. The planted signal column drives the
    escalation probability out of zero-fatality states when
    ``signal_strength`` is nonzero; all other covariates are pure noise
    with an AR(1) time structure inside each unit.
    """
    rng = np.random.default_rng(seed)
    schema = config.covariate_schema()
    columns = list(schema)
    n_units, n_months = config.n_units, config.n_months
    records = []
    for u in range(n_units):
        unit_id = f"U{u:03d}"
        # AR(1) covariates with unit-1 marginal variance
        cov = np.empty((n_months, len(columns)))
        innov_sd = math.sqrt(1.0 - config.signal_rho**2)
        cov[0] = rng.normal(size=len(columns))
        for t in range(1, n_months):
            cov[t] = config.signal_rho * cov[t - 1] + innov_sd * rng.normal(size=len(columns))
        signal = cov[:, columns.index(config.signal_column)]

        fat = np.zeros(n_months, dtype=np.int64)
        # state of the pair (fat[t-1], fat[t]); everyone starts Peaceful
        prev_zero, cur_zero = True, True
        for t in range(n_months - 1):
            if prev_zero and cur_zero:  # Peaceful
                p_nonzero = _escalation_prob(config.p_escalate, config.signal_strength, signal[t])
            elif not prev_zero and cur_zero:  # DeEscalation
                p_nonzero = _escalation_prob(config.p_reescalate, config.signal_strength, signal[t])
            elif prev_zero and not cur_zero:  # Escalation
                p_nonzero = config.p_escalation_to_war
            else:  # War
                p_nonzero = config.p_war_continue
            goes_nonzero = rng.random() < p_nonzero
            if goes_nonzero:
                mean = config.war_fatality_mean if not cur_zero else config.escalation_fatality_mean
                fat[t + 1] = 1 + rng.poisson(mean - 1.0)
            prev_zero, cur_zero = cur_zero, fat[t + 1] == 0

        months = np.arange(config.first_month, config.first_month + n_months)
        frame = pd.DataFrame(cov, columns=columns)
        frame.insert(0, "fatalities", fat)
        frame.insert(0, "month_id", months)
        frame.insert(0, "unit_id", unit_id)
        records.append(frame)
    df = pd.concat(records, ignore_index=True)
    return PanelDataset(df, covariate_groups=schema)
