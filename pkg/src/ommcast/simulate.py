"""Dynamic Monte Carlo simulation of fatality paths.

Each path starts from a unit's last observed state and rolls forward:
draw the next state from the origin state's transition model, draw
fatalities from the matching outcome forest when the next state is
nonzero, then update the decay feature with the simulated fatalities.
Exogenous PC scores are frozen at their last observed values; the decay
column is the only feature the simulation itself moves.

Every path owns an RNG stream keyed by (master seed, unit index, draw
index) and consumes exactly two uniforms per step (transition, quantile),
so results are bit-identical whatever the execution order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import DataError, ValidationError
from .features import DECAY_COLUMN, decay_feature, decay_rate
from .markov import NONZERO_STATES, MarkovState, FittedModelSet, allowed_successors, state_of_pair
from .panel import PanelDataset

_STATES = list(MarkovState)
_STATE_INDEX = {s: i for i, s in enumerate(_STATES)}
# per state index: (zero successor index, nonzero successor index)
_ZERO_SUCC = np.array([_STATE_INDEX[allowed_successors(s)[0]] for s in _STATES])
_NONZERO_SUCC = np.array([_STATE_INDEX[allowed_successors(s)[1]] for s in _STATES])
_IS_NONZERO = np.array([s in NONZERO_STATES for s in _STATES])


@dataclass(frozen=True)
class SimulationConfig:
    n_draws: int = 1000
    horizon: int = 12
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_draws < 1:
            raise ValidationError(f"n_draws must be >= 1, got {self.n_draws}")
        if self.horizon < 1:
            raise ValidationError(f"horizon must be >= 1, got {self.horizon}")


@dataclass
class PathState:
    """Mutable per-path simulation state (vectorized over draws per unit)."""

    state: MarkovState
    decay: float
    exog: np.ndarray
    last_fatalities: int


@dataclass
class ForecastDraws:
    """Predictive densities: n_draws simulated counts per (unit, month)."""

    unit_ids: list[str]
    months: list[int]
    draws: np.ndarray  # (n_units, horizon, n_draws) non-negative ints

    def __post_init__(self):
        if (self.draws < 0).any():
            raise DataError("forecast draws must be non-negative")

    @property
    def n_draws(self) -> int:
        return self.draws.shape[2]

    def cell(self, unit_id: str, month_id: int) -> np.ndarray:
        return self.draws[self.unit_ids.index(unit_id), self.months.index(month_id)]

    def to_frame(self) -> pd.DataFrame:
        n_units, horizon, n_draws = self.draws.shape
        return pd.DataFrame(
            {
                "unit_id": np.repeat(self.unit_ids, horizon * n_draws),
                "month_id": np.tile(np.repeat(self.months, n_draws), n_units),
                "draw_idx": np.tile(np.arange(n_draws), n_units * horizon),
                "outcome": self.draws.reshape(-1),
            }
        )

    def write_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "ForecastDraws":
        needed = {"unit_id", "month_id", "draw_idx", "outcome"}
        missing = needed - set(df.columns)
        if missing:
            raise DataError(f"draw file is missing columns {sorted(missing)}")
        units = sorted(df["unit_id"].astype(str).unique())
        months = sorted(int(m) for m in df["month_id"].unique())
        n_draws = int(df["draw_idx"].max()) + 1
        draws = np.zeros((len(units), len(months), n_draws), dtype=np.int64)
        u_idx = {u: i for i, u in enumerate(units)}
        m_idx = {m: i for i, m in enumerate(months)}
        counts = np.zeros((len(units), len(months)), dtype=np.int64)
        ui = df["unit_id"].astype(str).map(u_idx).to_numpy()
        mi = df["month_id"].astype(int).map(m_idx).to_numpy()
        di = df["draw_idx"].to_numpy(dtype=np.int64)
        draws[ui, mi, di] = df["outcome"].to_numpy(dtype=np.int64)
        np.add.at(counts, (ui, mi), 1)
        if not (counts == n_draws).all():
            raise DataError("draw file has incomplete (unit, month) cells")
        return cls(unit_ids=units, months=months, draws=draws)

    @classmethod
    def read_csv(cls, path) -> "ForecastDraws":
        try:
            return cls.from_frame(pd.read_csv(path, dtype={"unit_id": str}))
        except FileNotFoundError as e:
            raise DataError(f"draw file not found: {path}") from e


def init_paths(models: FittedModelSet, panel: PanelDataset, cfg: SimulationConfig) -> dict[str, PathState]:
    """Starting state per unit from its last two observed months."""
    features = models.pipeline.transform(panel)
    exog_cols = [i for i, c in enumerate(features.columns) if c != DECAY_COLUMN]
    starts: dict[str, PathState] = {}
    for unit in panel.units:
        frame = panel.unit_frame(unit)
        if len(frame) < 2:
            raise DataError(f"unit {unit}: need >= 2 observed months before the forecast window")
        months = frame["month_id"].to_numpy()
        if months[-1] - months[-2] != 1:
            raise DataError(f"unit {unit}: last two observed months are not contiguous")
        fats = frame["fatalities"].to_numpy()
        mask = features.unit_ids == unit
        last_row = features.values[mask][-1]
        starts[unit] = PathState(
            state=state_of_pair(int(fats[-2]), int(fats[-1])),
            decay=float(decay_feature(fats, models.pipeline.half_life)[-1]),
            exog=last_row[exog_cols],
            last_fatalities=int(fats[-1]),
        )
    return starts


def step_path(models: FittedModelSet, path: PathState, rng: np.random.Generator) -> tuple[PathState, int]:
    """Advance one path one month; returns the new state and its fatalities."""
    x = np.concatenate([path.exog, [path.decay]])
    p_nonzero = float(models.transitions.models[path.state].nonzero_prob(x)[0])
    zero_succ, nonzero_succ = allowed_successors(path.state)
    u_state, u_quantile = rng.random(2)
    if u_state < p_nonzero:
        next_state = nonzero_succ
        value = models.outcomes.for_state(next_state).sample_at(np.atleast_2d(x), [u_quantile])[0]
        fatalities = max(1, int(np.rint(value)))
    else:
        next_state = zero_succ
        fatalities = 0
    rho = decay_rate(models.pipeline.half_life)
    new = PathState(
        state=next_state,
        decay=path.decay * rho + fatalities,
        exog=path.exog,
        last_fatalities=fatalities,
    )
    return new, fatalities


def _simulate_unit(models, start: PathState, uniforms: np.ndarray) -> np.ndarray:
    """All of a unit's paths, vectorized over draws.

    ``uniforms`` has shape (n_draws, horizon, 2): one transition uniform
    and one quantile uniform per path-step, drawn from per-path streams.
    """
    n_draws, horizon, _ = uniforms.shape
    rho = decay_rate(models.pipeline.half_life)
    states = np.full(n_draws, _STATE_INDEX[start.state])
    decay = np.full(n_draws, start.decay)
    out = np.zeros((horizon, n_draws), dtype=np.int64)
    exog = np.tile(start.exog, (n_draws, 1))
    for h in range(horizon):
        X = np.column_stack([exog, decay])
        p_nonzero = np.empty(n_draws)
        for s_idx in np.unique(states):
            mask = states == s_idx
            p_nonzero[mask] = models.transitions.models[_STATES[s_idx]].nonzero_prob(X[mask])
        goes_nonzero = uniforms[:, h, 0] < p_nonzero
        next_states = np.where(goes_nonzero, _NONZERO_SUCC[states], _ZERO_SUCC[states])
        fats = np.zeros(n_draws, dtype=np.int64)
        for s_idx in np.unique(next_states[goes_nonzero]) if goes_nonzero.any() else []:
            mask = goes_nonzero & (next_states == s_idx)
            qrf = models.outcomes.for_state(_STATES[s_idx])
            values = qrf.sample_at(X[mask], uniforms[mask, h, 1])
            fats[mask] = np.maximum(1, np.rint(values).astype(np.int64))
        out[h] = fats
        decay = decay * rho + fats
        states = next_states
    return out.T  # (n_draws, horizon) -> caller transposes as needed


def _path_uniforms(seed: int, unit_index: int, n_draws: int, horizon: int) -> np.ndarray:
    u = np.empty((n_draws, horizon, 2))
    for j in range(n_draws):
        rng = np.random.default_rng(np.random.SeedSequence([seed, unit_index, j]))
        u[j] = rng.random((horizon, 2))
    return u


def simulate_paths(models: FittedModelSet, panel: PanelDataset, cfg: SimulationConfig) -> ForecastDraws:
    """Full predictive density: n_draws paths per unit over the horizon.

    Forecast months run from the month after each unit's last observation;
    all units must end at the same month so the cells align.
    """
    starts = init_paths(models, panel, cfg)
    last_months = {u: int(panel.unit_frame(u)["month_id"].max()) for u in panel.units}
    last = max(last_months.values())
    ragged = [u for u, m in last_months.items() if m != last]
    if ragged:
        raise DataError(f"units end before month {last}: {ragged}")
    units = panel.units
    months = list(range(last + 1, last + 1 + cfg.horizon))

    def one(args):
        idx, unit = args
        uniforms = _path_uniforms(cfg.seed, idx, cfg.n_draws, cfg.horizon)
        return _simulate_unit(models, starts[unit], uniforms)

    jobs = list(enumerate(units))
    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]

    draws = np.stack([r.T for r in results])  # (n_units, horizon, n_draws)
    return ForecastDraws(unit_ids=list(units), months=months, draws=draws)


def draws_summary(fd: ForecastDraws, quantiles=(0.05, 0.25, 0.5, 0.75, 0.95)) -> pd.DataFrame:
    """Per-cell empirical quantiles (linear interpolation), mean, share of zeros."""
    quantiles = list(quantiles)
    if any(q < 0 or q > 1 for q in quantiles):
        raise ValidationError("summary quantiles must lie in [0, 1]")
    records = []
    for i, unit in enumerate(fd.unit_ids):
        for j, month in enumerate(fd.months):
            cell = fd.draws[i, j]
            row = {"unit_id": unit, "month_id": month}
            qs = np.quantile(cell, quantiles)
            for q, v in zip(quantiles, qs):
                row[f"q{int(round(q * 100)):02d}"] = v
            row["mean"] = float(cell.mean())
            row["frac_zero"] = float((cell == 0).mean())
            records.append(row)
    return pd.DataFrame(records)
