"""The four country-month benchmark forecasters.

All emit the same draw-based ForecastDraws shape as the simulator, so one
evaluate path scores everything. Each benchmark keeps its distribution
fixed across the whole horizon (a static climatology; no recursion).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ValidationError
from .panel import PanelDataset
from .simulate import ForecastDraws

BENCHMARK_KINDS = ("exactly_zero", "last_poisson", "conflictology_12m", "boot_240")


@dataclass(frozen=True)
class BenchmarkSpec:
    kind: str
    n_draws: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in BENCHMARK_KINDS:
            raise ValidationError(f"unknown benchmark kind {self.kind!r}; one of {BENCHMARK_KINDS}")
        if self.n_draws < 1:
            raise ValidationError(f"n_draws must be >= 1, got {self.n_draws}")


def _check_window(months: list[int]):
    months = [int(m) for m in months]
    if not months or months != list(range(months[0], months[0] + len(months))):
        raise ValidationError("forecast window must be a non-empty contiguous month range")
    return months


def _unit_rng(seed: int, unit_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, unit_index]))


def bench_exactly_zero(panel: PanelDataset, months: list[int], n_draws: int) -> ForecastDraws:
    """Zero fatalities everywhere."""
    months = _check_window(months)
    units = panel.units
    draws = np.zeros((len(units), len(months), n_draws), dtype=np.int64)
    return ForecastDraws(unit_ids=units, months=months, draws=draws)


def bench_last_poisson(panel: PanelDataset, months: list[int], n_draws: int, seed: int = 0) -> ForecastDraws:
    """Poisson draws with lambda = the unit's last pre-window fatality count."""
    months = _check_window(months)
    units = panel.units
    draws = np.empty((len(units), len(months), n_draws), dtype=np.int64)
    for i, unit in enumerate(units):
        frame = panel.unit_frame(unit)
        before = frame[frame["month_id"] == months[0] - 1]
        if before.empty:
            raise DataError(f"unit {unit}: no observation in month {months[0] - 1} for Poisson lambda")
        lam = float(before["fatalities"].iloc[0])
        rng = _unit_rng(seed, i)
        draws[i] = rng.poisson(lam, size=(len(months), n_draws))
    return ForecastDraws(unit_ids=units, months=months, draws=draws)


def bench_conflictology(
    panel: PanelDataset,
    months: list[int],
    n_draws: int,
    lookback: int,
    seed: int = 0,
) -> ForecastDraws:
    """Bootstrap resamples from the unit's trailing observed fatalities.

    Lookback 12 is the short-memory conflictology benchmark, 240 the
    long-memory one. Units with shorter history use whatever they have.
    """
    months = _check_window(months)
    if lookback < 1:
        raise ValidationError(f"lookback must be >= 1, got {lookback}")
    units = panel.units
    draws = np.empty((len(units), len(months), n_draws), dtype=np.int64)
    for i, unit in enumerate(units):
        frame = panel.unit_frame(unit)
        trailing = frame[
            (frame["month_id"] < months[0]) & (frame["month_id"] >= months[0] - lookback)
        ]["fatalities"].to_numpy()
        if trailing.size == 0:
            raise DataError(f"unit {unit}: no observed months in the {lookback}-month lookback")
        rng = _unit_rng(seed, i)
        draws[i] = rng.choice(trailing, size=(len(months), n_draws), replace=True)
    return ForecastDraws(unit_ids=units, months=months, draws=draws)


def run_benchmark(spec: BenchmarkSpec, panel: PanelDataset, months: list[int]) -> ForecastDraws:
    if spec.kind == "exactly_zero":
        return bench_exactly_zero(panel, months, spec.n_draws)
    if spec.kind == "last_poisson":
        return bench_last_poisson(panel, months, spec.n_draws, spec.seed)
    if spec.kind == "conflictology_12m":
        return bench_conflictology(panel, months, spec.n_draws, 12, spec.seed)
    return bench_conflictology(panel, months, spec.n_draws, 240, spec.seed)
