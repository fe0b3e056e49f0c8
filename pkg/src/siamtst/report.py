"""Turn result directories into plot-ready CSVs and rendered figures.

Reads the ``summary.json`` / ``metrics.csv`` / ``forecast_*.csv`` files
an experiment run produced and writes, next to each figure PNG, a small
CSV holding exactly the numbers that were plotted. Rendering uses the
Agg backend so it works headless.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

logger = logging.getLogger(__name__)

_STYLES = {
    "siamtst": {"color": "#1f77b4", "marker": "o"},
    "linearnet": {"color": "#ff7f0e", "marker": "s"},
    "ridge": {"color": "#2ca02c", "marker": "^"},
    "persistence": {"color": "#7f7f7f", "marker": "x"},
}


def _style(name) -> dict:
    return _STYLES.get(str(name), {"marker": "o"})


def _write_rows_csv(path: Path, fields: list, rows: list):
    lines = [",".join(fields)]
    for row in rows:
        lines.append(",".join(
            repr(row[f]) if isinstance(row[f], float) else str(row[f])
            for f in fields))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def plot_metric_vs_horizon(aggregates: list, metric: str, out_dir: Path) -> Path:
    """One line per model: mean metric against forecast horizon."""
    fields = ["model", "horizon", f"{metric}_mean", f"{metric}_std"]
    rows = sorted(
        ({"model": a["model"], "horizon": a["horizon"],
          f"{metric}_mean": a[f"{metric}_mean"], f"{metric}_std": a[f"{metric}_std"]}
         for a in aggregates),
        key=lambda r: (str(r["model"]), r["horizon"]))
    _write_rows_csv(out_dir / f"figure_{metric}_vs_horizon.csv", fields, rows)

    fig, ax = plt.subplots(figsize=(6, 4))
    models = sorted({r["model"] for r in rows})
    for model in models:
        pts = [r for r in rows if r["model"] == model]
        h = [r["horizon"] for r in pts]
        m = [r[f"{metric}_mean"] for r in pts]
        e = [r[f"{metric}_std"] for r in pts]
        ax.errorbar(h, m, yerr=e, label=str(model), capsize=3, **_style(model))
    ax.set_xlabel("forecast horizon (hours)")
    ax.set_ylabel(f"{metric.upper()} (normalized scale)")
    ax.set_xticks(sorted({r["horizon"] for r in rows}))
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = out_dir / f"{metric}_vs_horizon.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_metric_vs_k(aggregates: list, metric: str, out_dir: Path) -> Path:
    """One line per horizon: mean metric against pre-training sector count."""
    fields = ["k", "horizon", f"{metric}_mean", f"{metric}_std"]
    rows = sorted(
        ({"k": a["k"], "horizon": a["horizon"],
          f"{metric}_mean": a[f"{metric}_mean"], f"{metric}_std": a[f"{metric}_std"]}
         for a in aggregates),
        key=lambda r: (r["horizon"], int(r["k"])))
    _write_rows_csv(out_dir / f"figure_{metric}_vs_k.csv", fields, rows)

    fig, ax = plt.subplots(figsize=(6, 4))
    horizons = sorted({r["horizon"] for r in rows})
    for horizon in horizons:
        pts = [r for r in rows if r["horizon"] == horizon]
        ks = [int(r["k"]) for r in pts]
        m = [r[f"{metric}_mean"] for r in pts]
        ax.plot(ks, m, marker="o", label=f"H={horizon}")
    ax.set_xlabel("pre-training sectors (k)")
    ax.set_ylabel(f"{metric.upper()} (normalized scale)")
    ax.set_xscale("log", base=2)
    ax.set_xticks(sorted({int(r['k']) for r in rows}))
    ax.get_xaxis().set_major_formatter(matplotlib.ticker.ScalarFormatter())
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = out_dir / f"{metric}_vs_k.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _read_forecast_rows(path: Path) -> dict:
    """Group a forecast CSV by feature, keeping step order."""
    lines = path.read_text(encoding="utf-8").splitlines()
    header = lines[0].split(",")
    idx = {name: header.index(name) for name in header}
    by_feature: dict = {}
    for line in lines[1:]:
        if not line:
            continue
        cells = line.split(",")
        by_feature.setdefault(cells[idx["feature"]], []).append({
            "timestamp_index": int(cells[idx["timestamp_index"]]),
            "y_true_denorm": float(cells[idx["y_true_denorm"]]),
            "y_pred_denorm": float(cells[idx["y_pred_denorm"]]),
            "horizon": int(cells[idx["horizon"]]),
        })
    return by_feature


def plot_forecast_overlay(forecast_csv: Path, out_dir: Path) -> Path:
    """True-vs-predicted overlay for the first window of each feature."""
    by_feature = _read_forecast_rows(forecast_csv)
    features = sorted(by_feature)
    fig, axes = plt.subplots(len(features), 1,
                             figsize=(7, 1.8 * len(features) + 1), sharex=True)
    if len(features) == 1:
        axes = [axes]
    plotted = []
    for ax, feature in zip(axes, features):
        rows = by_feature[feature]
        horizon = rows[0]["horizon"]
        first = rows[:horizon]  # rows are ordered window-major
        t = [r["timestamp_index"] for r in first]
        ax.plot(t, [r["y_true_denorm"] for r in first], label="actual", color="#333333")
        ax.plot(t, [r["y_pred_denorm"] for r in first], label="forecast",
                color="#1f77b4", linestyle="--")
        ax.set_ylabel(feature, fontsize=8)
        ax.grid(alpha=0.3)
        for r in first:
            plotted.append({"feature": feature, **r})
    axes[0].legend(loc="upper right", fontsize=8)
    axes[-1].set_xlabel("timestamp index within split")
    fig.tight_layout()
    stem = forecast_csv.stem
    _write_rows_csv(out_dir / f"figure_{stem}.csv",
                    ["feature", "timestamp_index", "y_true_denorm", "y_pred_denorm", "horizon"],
                    plotted)
    path = out_dir / f"{stem}.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def generate_report(results_dir, out_dir=None) -> list:
    """Render every figure the result directory supports; return paths."""
    results = Path(results_dir)
    if not results.is_dir():
        raise ValueError(f"{results} is not a directory")
    out = Path(out_dir) if out_dir is not None else results / "report"
    out.mkdir(parents=True, exist_ok=True)
    written = []

    summary_path = results / "summary.json"
    if summary_path.exists():
        summary = json.loads(summary_path.read_text(encoding="utf-8"))
        aggregates = summary.get("aggregates", [])
        if aggregates and "model" in aggregates[0]:
            for metric in ("mae", "mse"):
                written.append(plot_metric_vs_horizon(aggregates, metric, out))
        if aggregates and "k" in aggregates[0]:
            for metric in ("mae", "mse"):
                written.append(plot_metric_vs_k(aggregates, metric, out))

    for forecast_csv in sorted(results.glob("forecast_*.csv")):
        written.append(plot_forecast_overlay(forecast_csv, out))

    if not written:
        raise ValueError(f"nothing to report in {results} "
                         "(no summary.json or forecast CSVs)")
    logger.info("wrote %d report files to %s", len(written), out)
    return written
