"""Command-line pipelines: synth, train, forecast, evaluate, backtest.

Every artifact gets a .meta.json sidecar with the config hash, master
seed, and package version; two runs with equal (config, seed) produce
byte-identical delimited outputs. Exit codes: 0 ok, 2 validation error,
3 data error, 4 model error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import pandas as pd

from . import __version__
from .benchmarks import BenchmarkSpec, run_benchmark
from .config import RunConfig
from .errors import DataError, OmmcastError
from .features import FeaturePipeline
from .markov import FittedModelSet, fit_model_set, load_model_set, save_model_set
from .metrics import MetricReport, evaluate, ranked_table
from .panel import PanelDataset, load_panel, synth_panel, write_panel
from .report import plot_backtest, plot_forecast_fan, plot_metric_comparison
from .simulate import ForecastDraws, draws_summary, simulate_paths

OMM_MODEL_NAME = "omm"


def _write_sidecar(artifact: Path, cfg: RunConfig, extra: dict | None = None) -> None:
    meta = {"config_hash": cfg.config_hash, "seed": cfg.seed, "version": __version__}
    if extra:
        meta.update(extra)
    sidecar = Path(str(artifact) + ".meta.json")
    sidecar.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def _read_schema_sidecar(panel_path: Path) -> dict[str, str] | None:
    sidecar = Path(str(panel_path) + ".meta.json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        return meta.get("schema")
    return None


def _load_panel(cfg: RunConfig) -> PanelDataset:
    panel_path = cfg.path("panel")
    return load_panel(panel_path, covariate_groups=_read_schema_sidecar(panel_path))


def _panel_through(panel: PanelDataset, month: int) -> PanelDataset:
    df = panel.frame
    sub = df[df["month_id"] <= month]
    if sub.empty:
        raise DataError(f"no panel rows at or before month {month}")
    return PanelDataset(sub, covariate_groups=panel.covariate_groups)


def _panel_window(panel: PanelDataset, start: int, end: int) -> PanelDataset:
    df = panel.frame
    sub = df[(df["month_id"] >= start) & (df["month_id"] <= end)]
    if sub.empty:
        raise DataError(f"no panel rows in months [{start}, {end}]")
    return PanelDataset(sub, covariate_groups=panel.covariate_groups)


def cmd_synth(cfg: RunConfig) -> Path:
    """Generate a synthetic panel CSV plus its provenance/schema sidecar."""
    synth_cfg = cfg.synth_config()
    panel = synth_panel(synth_cfg, cfg.seed)
    out = cfg.out_dir()
    panel_path = Path(cfg.paths.get("panel", out / "panel.csv"))
    panel_path.parent.mkdir(parents=True, exist_ok=True)
    write_panel(panel, panel_path)
    _write_sidecar(panel_path, cfg, extra={"schema": synth_cfg.covariate_schema()})
    return panel_path


def _fit_from_config(cfg: RunConfig, train: PanelDataset) -> FittedModelSet:
    groups = cfg.feature_groups(schema=train.covariate_groups or None)
    pipeline = FeaturePipeline(groups=groups, half_life=cfg.half_life())
    return fit_model_set(
        train,
        pipeline,
        transition_hyper=cfg.transition_hyper(),
        outcome_hyper=cfg.outcome_hyper(),
        target_transform=cfg.target_transform(),
        metadata={"config_hash": cfg.config_hash, "seed": cfg.seed},
    )


def cmd_train(cfg: RunConfig) -> Path:
    """Fit the feature pipeline and both model stages on the training window."""
    panel = _load_panel(cfg)
    split = cfg.split_spec()
    train = _panel_through(panel, split.train_end_month)
    models = _fit_from_config(cfg, train)
    out = cfg.out_dir()
    model_path = Path(cfg.paths.get("model", out / "model.npz"))
    model_path.parent.mkdir(parents=True, exist_ok=True)
    save_model_set(models, model_path)
    _write_sidecar(model_path, cfg)
    return model_path


def cmd_forecast(cfg: RunConfig) -> Path:
    """Simulate the predictive density and write draws, summary, and fan chart."""
    panel = _load_panel(cfg)
    split = cfg.split_spec()
    history = _panel_through(panel, split.forecast_start_month - 1)
    hist_last = history.month_range[1]
    if hist_last != split.forecast_start_month - 1:
        raise DataError(
            f"history ends at month {hist_last}; cannot start forecasting at "
            f"{split.forecast_start_month}"
        )
    models = load_model_set(cfg.path("model", str(cfg.out_dir() / "model.npz")))
    sim_cfg = cfg.simulation_config(horizon=split.horizon)
    fd = simulate_paths(models, history, sim_cfg)
    out = cfg.out_dir()
    draws_path = out / "forecast_omm.csv"
    fd.write_csv(draws_path)
    _write_sidecar(draws_path, cfg)
    summary = draws_summary(fd)
    summary.to_csv(out / "forecast_summary.csv", index=False)
    plot_forecast_fan(summary, out / "forecast_fan.png")
    return draws_path


def cmd_evaluate(cfg: RunConfig, draw_files: list) -> Path:
    """Score draw files against the panel's actuals; write the ranked table."""
    panel = _load_panel(cfg)
    binning = cfg.ign_binning()
    alpha = cfg.mis_alpha()
    reports: list[MetricReport] = []
    out = cfg.out_dir()
    for f in draw_files:
        f = Path(f)
        fd = ForecastDraws.read_csv(f)
        actuals = _panel_window(panel, fd.months[0], fd.months[-1])
        report = evaluate(fd, actuals, binning=binning, alpha=alpha, model=f.stem)
        report.per_unit.to_csv(out / f"metrics_{f.stem}_by_unit.csv", index=False)
        report.per_month.to_csv(out / f"metrics_{f.stem}_by_month.csv", index=False)
        reports.append(report)
    table = ranked_table(reports)
    report_path = out / "metric_report.csv"
    table.to_csv(report_path, index=False, float_format="%.6f")
    _write_sidecar(report_path, cfg)
    plot_metric_comparison(table, out / "metric_comparison.png")
    print(table.to_string(index=False))
    return report_path


def cmd_backtest(cfg: RunConfig) -> Path:
    """Rolling-origin evaluation: train through each cutoff, score the next year.

    Only rows at or before each origin are visible to fitting and
    simulation, so appending later rows cannot change the forecasts.
    """
    panel = _load_panel(cfg)
    origins = cfg.backtest_origins()
    horizon = cfg.backtest_horizon()
    binning = cfg.ign_binning()
    alpha = cfg.mis_alpha()
    bench_kinds = cfg.backtest_benchmarks()
    sim_section = cfg.raw.get("simulate", {})
    n_draws = int(sim_section.get("n_draws", 1000))
    n_jobs = int(sim_section.get("n_jobs", 1))
    out = cfg.out_dir()

    rows = []
    for origin in origins:
        history = _panel_through(panel, origin)
        actual_end = origin + horizon
        actuals = _panel_window(panel, origin + 1, actual_end)
        if actuals.month_range[1] < actual_end:
            raise DataError(f"origin {origin}: panel lacks actuals through month {actual_end}")
        months = list(range(origin + 1, actual_end + 1))

        models = _fit_from_config(cfg, history)
        from .simulate import SimulationConfig

        fd = simulate_paths(
            models, history, SimulationConfig(n_draws=n_draws, horizon=horizon, seed=cfg.seed, n_jobs=n_jobs)
        )
        forecasts = {OMM_MODEL_NAME: fd}
        for kind in bench_kinds:
            spec = BenchmarkSpec(kind=kind, n_draws=n_draws, seed=cfg.seed)
            forecasts[kind] = run_benchmark(spec, history, months)
        for name, f in forecasts.items():
            report = evaluate(f, actuals, binning=binning, alpha=alpha, model=name)
            rows.append({"origin": origin, **report.summary_row(), "n_cells": report.n_cells})

    results = pd.DataFrame(rows)
    pooled = []
    for model, sub in results.groupby("model", sort=False):
        weights = sub["n_cells"]
        pooled.append(
            {
                "origin": "pooled",
                "model": model,
                "crps": float((sub["crps"] * weights).sum() / weights.sum()),
                "ign": float((sub["ign"] * weights).sum() / weights.sum()),
                "mis": float((sub["mis"] * weights).sum() / weights.sum()),
                "n_cells": int(weights.sum()),
            }
        )
    results = pd.concat([results, pd.DataFrame(pooled)], ignore_index=True)
    backtest_path = out / "backtest.csv"
    results.to_csv(backtest_path, index=False, float_format="%.6f")
    _write_sidecar(backtest_path, cfg)
    plot_backtest(results, out / "backtest_origins.png")
    print(results[results["origin"] == "pooled"].to_string(index=False))
    return backtest_path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ommcast",
        description="Observed Markov model forecasting of conflict fatality densities",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("synth", "generate a synthetic panel"),
        ("train", "fit the two-stage model"),
        ("forecast", "simulate predictive densities"),
        ("evaluate", "score draw files against actuals"),
        ("backtest", "rolling-origin training and scoring"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", default=None, help="override the output directory")
        if name == "evaluate":
            p.add_argument("draw_files", nargs="+", help="forecast draw CSV files to score")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, seed_override=args.seed, out_override=args.out)
        if args.command == "synth":
            print(cmd_synth(cfg))
        elif args.command == "train":
            print(cmd_train(cfg))
        elif args.command == "forecast":
            print(cmd_forecast(cfg))
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.draw_files)
        elif args.command == "backtest":
            cmd_backtest(cfg)
    except OmmcastError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
