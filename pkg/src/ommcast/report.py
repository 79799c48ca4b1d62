"""Figure rendering for the CLI's report paths.

Every command that writes a delimited output also renders a matplotlib
figure next to it: forecast fan charts, metric comparison bars, and
per-origin backtest trajectories.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

_METRICS = ("crps", "ign", "mis")


def plot_forecast_fan(summary: pd.DataFrame, path, max_units: int = 12) -> None:
    """Per-unit fan chart of the forecast quantile bands over the horizon."""
    units = list(dict.fromkeys(summary["unit_id"]))[:max_units]
    ncols = min(4, len(units))
    nrows = int(np.ceil(len(units) / ncols))
    fig, axes = plt.subplots(nrows, ncols, figsize=(3.2 * ncols, 2.4 * nrows), squeeze=False, sharex=True)
    for ax in axes.flat[len(units) :]:
        ax.set_visible(False)
    for ax, unit in zip(axes.flat, units):
        sub = summary[summary["unit_id"] == unit]
        months = sub["month_id"].to_numpy()
        if {"q05", "q95"} <= set(sub.columns):
            ax.fill_between(months, sub["q05"], sub["q95"], alpha=0.25, label="90% band")
        if {"q25", "q75"} <= set(sub.columns):
            ax.fill_between(months, sub["q25"], sub["q75"], alpha=0.4, label="50% band")
        if "q50" in sub.columns:
            ax.plot(months, sub["q50"], lw=1.5, label="median")
        ax.set_title(str(unit), fontsize=9)
    axes[0, 0].legend(fontsize=7, frameon=False)
    fig.supxlabel("month")
    fig.supylabel("fatalities")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_metric_comparison(table: pd.DataFrame, path) -> None:
    """One bar panel per scoring rule, models on the x axis."""
    fig, axes = plt.subplots(1, len(_METRICS), figsize=(4.0 * len(_METRICS), 3.2))
    for ax, metric in zip(axes, _METRICS):
        ax.bar(table["model"], table[metric], color="steelblue")
        ax.set_title(metric.upper())
        ax.tick_params(axis="x", rotation=45, labelsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_backtest(results: pd.DataFrame, path) -> None:
    """CRPS per origin for each model (pooled rows excluded)."""
    per_origin = results[results["origin"] != "pooled"].copy()
    per_origin["origin"] = per_origin["origin"].astype(int)
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for model, sub in per_origin.groupby("model"):
        sub = sub.sort_values("origin")
        ax.plot(sub["origin"], sub["crps"], marker="o", label=model)
    ax.set_xlabel("training cutoff month")
    ax.set_ylabel("mean CRPS")
    ax.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
