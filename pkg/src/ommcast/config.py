"""Run configuration: one TOML file drives every CLI command.

The resolved config dict is hashed (sha256 over canonical JSON) and that
hash is embedded in every output artifact's sidecar, so a run is fully
identified by (config hash, master seed).
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ValidationError
from .features import DEFAULT_HALF_LIFE, FeatureGroupSpec, default_group_specs
from .forest import ForestHyperparams
from .metrics import DEFAULT_IGN_EDGES, DEFAULT_IGN_FLOOR, DEFAULT_MIS_ALPHA, IgnBinning
from .panel import SplitSpec, SynthConfig
from .simulate import SimulationConfig


@dataclass
class RunConfig:
    seed: int = 0
    paths: dict[str, str] = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    # ------------------------------------------------------------------
    @classmethod
    def load(cls, path, seed_override: int | None = None, out_override: str | None = None) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"config file not found: {path}")
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise ValidationError(f"cannot parse config {path}: {e}") from e
        cfg = cls(seed=int(raw.get("seed", 0)), paths=dict(raw.get("paths", {})), raw=raw)
        if seed_override is not None:
            cfg.seed = int(seed_override)
            cfg.raw = {**raw, "seed": cfg.seed}
        if out_override is not None:
            cfg.paths["out"] = str(out_override)
        return cfg

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, default=str)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    # -- resolved sections ---------------------------------------------
    def out_dir(self) -> Path:
        out = Path(self.paths.get("out", "out"))
        out.mkdir(parents=True, exist_ok=True)
        return out

    def path(self, key: str, default: str | None = None) -> Path:
        value = self.paths.get(key, default)
        if value is None:
            raise ValidationError(f"config [paths] is missing {key!r}")
        return Path(value)

    def synth_config(self) -> SynthConfig:
        section = dict(self.raw.get("synth", {}))
        try:
            return SynthConfig(**section)
        except TypeError as e:
            raise ValidationError(f"bad [synth] section: {e}") from e

    def feature_groups(self, schema: dict[str, str] | None = None) -> list[FeatureGroupSpec]:
        """Explicit [[features.groups]] entries, else defaults from a schema."""
        section = self.raw.get("features", {})
        entries = section.get("groups")
        if entries:
            return [
                FeatureGroupSpec(g["name"], tuple(g["columns"]), int(g.get("components", 1)))
                for g in entries
            ]
        if schema:
            return default_group_specs(schema)
        raise ValidationError(
            "no [[features.groups]] in config and no covariate schema sidecar available"
        )

    def half_life(self) -> float:
        return float(self.raw.get("features", {}).get("half_life", DEFAULT_HALF_LIFE))

    def _hyper(self, section: dict) -> ForestHyperparams:
        known = {k: v for k, v in section.items() if k != "target_transform"}
        try:
            return ForestHyperparams(seed=self.seed, **known)
        except TypeError as e:
            raise ValidationError(f"bad forest hyperparameters: {e}") from e

    def transition_hyper(self) -> ForestHyperparams:
        return self._hyper(dict(self.raw.get("forest", {}).get("transition", {})))

    def outcome_hyper(self) -> ForestHyperparams:
        return self._hyper(dict(self.raw.get("forest", {}).get("outcome", {})))

    def target_transform(self) -> str:
        return str(self.raw.get("forest", {}).get("outcome", {}).get("target_transform", "log1p"))

    def split_spec(self) -> SplitSpec:
        section = self.raw.get("split")
        if not section:
            raise ValidationError("config is missing the [split] section")
        try:
            return SplitSpec(
                train_end_month=int(section["train_end_month"]),
                forecast_start_month=int(section["forecast_start_month"]),
                horizon=int(section.get("horizon", 12)),
            )
        except KeyError as e:
            raise ValidationError(f"[split] is missing {e}") from e

    def simulation_config(self, horizon: int | None = None) -> SimulationConfig:
        section = dict(self.raw.get("simulate", {}))
        if horizon is None:
            horizon = int(section.get("horizon", self.raw.get("split", {}).get("horizon", 12)))
        return SimulationConfig(
            n_draws=int(section.get("n_draws", 1000)),
            horizon=horizon,
            seed=self.seed,
            n_jobs=int(section.get("n_jobs", 1)),
        )

    def ign_binning(self) -> IgnBinning:
        section = self.raw.get("metrics", {})
        return IgnBinning(
            lower_edges=tuple(section.get("ign_edges", DEFAULT_IGN_EDGES)),
            floor=float(section.get("ign_floor", DEFAULT_IGN_FLOOR)),
        )

    def mis_alpha(self) -> float:
        return float(self.raw.get("metrics", {}).get("alpha", DEFAULT_MIS_ALPHA))

    def backtest_origins(self) -> list[int]:
        section = self.raw.get("backtest", {})
        origins = section.get("origins")
        if not origins or len(origins) < 1:
            raise ValidationError("config [backtest] must list at least one origin month")
        return [int(o) for o in origins]

    def backtest_horizon(self) -> int:
        return int(self.raw.get("backtest", {}).get("horizon", 12))

    def backtest_benchmarks(self) -> list[str]:
        return list(
            self.raw.get("backtest", {}).get(
                "benchmarks",
                ["exactly_zero", "last_poisson", "conflictology_12m", "boot_240"],
            )
        )
