"""Experiment orchestration: per-sector pipelines, E1, E2, and reports.

E1 compares the pre-trained transformer against LinearNet, ridge on
frozen representations, and persistence, per sector and horizon. E2
pre-trains one backbone on k sectors and fine-tunes on target sectors
to measure the effect of multi-sector pre-training. Both emit a
``metrics.csv`` (per-run rows), a ``summary.json`` (aggregates, ranks,
paired t-tests, failures), and a ``config.json`` echo; aggregates are
always recomputable from the emitted rows.

Per-sector jobs may run in parallel threads; set SIAMTST_THREADS to cap
the worker count. Assembly is single-threaded and sorted, so outputs do
not depend on scheduling.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbone import Backbone, save_checkpoint
from .baselines import (RIDGE_LAMBDA_GRID, LinearNet, persistence_forecast,
                        ridge_fit, train_linearnet)
from .config import VERSION, RunConfig, echo_config
from .data import (FEATURES, SectorSeries, SplitSpec, SyntheticProfile, WindowSet,
                   generate_dataset, ingest_csv, make_windows, normalize_split,
                   NormStats)
from .heads import ForecastHead, finetune, flatten_tokens, forecast_batch
from .layers import revin_denormalize, revin_normalize
from .metrics import metrics, paired_t_test
from .pretraining import MaskSpec, pretrain
from .tensor import no_grad

logger = logging.getLogger(__name__)

METRIC_FIELDS = ("model", "sector_id", "horizon", "k", "mae", "mse")


# -- seeds -------------------------------------------------------------------

# Seed namespaces, so per-sector, per-horizon, and per-arm streams never
# collide. The E2 k=1 arm reuses the per-sector namespace on purpose: it
# must reproduce the single-sector pipeline bit for bit.
_NS_PRETRAIN = 0
_NS_FINETUNE = 1
_NS_LINEARNET = 2
_NS_E2_ARM = 3


def derive_seed(base: int, *parts: int) -> int:
    """Stable sub-seed from a base seed and integer tags."""
    seq = np.random.SeedSequence([int(base)] + [int(p) for p in parts])
    return int(seq.generate_state(1, np.uint64)[0])


# -- data preparation --------------------------------------------------------


@dataclass
class SectorData:
    """One sector after splitting and train-fitted normalization."""

    sector_id: str
    features: tuple
    splits: dict               # name -> [N, len] on the normalized scale
    stats: NormStats


def prepare_sectors(cfg: RunConfig) -> list[SectorData]:
    """Synthesize (or ingest) sectors, then split and normalize each."""
    if cfg.data.source:
        series_list = ingest_csv(cfg.data.source)
        if not series_list:
            raise ValueError(f"no usable sectors in {cfg.data.source!r}")
    else:
        profile = SyntheticProfile(phase_jitter=cfg.data.phase_jitter)
        series_list = generate_dataset(cfg.data.seed, cfg.data.n_sectors,
                                       cfg.data.hours, profile)
    spec = SplitSpec(cfg.data.train_frac, cfg.data.val_frac, cfg.data.test_frac)
    sectors = []
    for series in series_list:
        splits, stats = normalize_split(series, spec, kind=cfg.data.normalization)
        sectors.append(SectorData(sector_id=series.sector_id,
                                  features=series.features,
                                  splits=splits, stats=stats))
    return sectors


def build_backbone(cfg: RunConfig, seed: int) -> Backbone:
    m = cfg.model
    return Backbone(patch_len=m.patch_len, num_patches=m.num_patches,
                    d_model=m.d_model, n_heads=m.n_heads, n_layers=m.n_layers,
                    d_ff=m.d_ff, rng=np.random.default_rng(seed),
                    qk_norm=m.qk_norm, learnable_qk_gains=m.learnable_qk_gains,
                    rmsnorm_eps=m.rmsnorm_eps, final_norm=m.final_norm,
                    attn_dropout=m.dropout, ffn_dropout=m.dropout)


def pretrain_contexts(sectors, cfg: RunConfig) -> np.ndarray:
    """Stack pre-training windows from the train splits of ``sectors``."""
    parts = [
        make_windows(s.splits["train"], cfg.model.context_len, 0,
                     stride=cfg.pretrain.window_stride).contexts
        for s in sectors
    ]
    return np.concatenate(parts, axis=0)


def pretrain_backbone(sectors, cfg: RunConfig, seed: int, epochs: int,
                      log_path=None) -> Backbone:
    backbone = build_backbone(cfg, seed)
    windows = pretrain_contexts(sectors, cfg)
    pre = cfg.pretrain
    pretrain(windows, backbone, epochs=epochs, batch_size=pre.batch_size,
             lr=pre.lr, mask_spec=MaskSpec(pre.mask_low, pre.mask_high),
             lambda_sim=pre.lambda_sim, seed=seed,
             shared_channel_mask=pre.shared_channel_mask,
             revin_eps=cfg.model.revin_eps, log_path=log_path)
    return backbone


# -- ridge over representations ---------------------------------------------


def window_representations(windows: np.ndarray, backbone: Backbone,
                           revin_eps: float = 1e-5,
                           batch_size: int = 256) -> np.ndarray:
    """Per-window feature vector: channel-concatenated last-patch output.

    Shape ``[num, N * d_model]``. Windows are instance-normalized before
    encoding, matching the forecasting path.
    """
    outs = []
    for start in range(0, windows.shape[0], batch_size):
        chunk = windows[start:start + batch_size]
        normed, _ = revin_normalize(chunk, eps=revin_eps)
        with no_grad():
            tokens = backbone.encode_window(normed)   # [b, N, K, D]
        last = tokens.data[..., -1, :]                # [b, N, D]
        outs.append(last.reshape(last.shape[0], -1))
    return np.concatenate(outs, axis=0)


def _ridge_xy(ws: WindowSet, backbone: Backbone, revin_eps: float):
    """Representations plus instance-normalized flat targets for a split."""
    x = window_representations(ws.contexts, backbone, revin_eps=revin_eps)
    _, state = revin_normalize(ws.contexts, eps=revin_eps)
    y = (ws.targets - state.mean[..., None]) / state.std[..., None]
    return x, y.reshape(y.shape[0], -1), state


def ridge_run(backbone: Backbone, train_ws: WindowSet, val_ws: WindowSet,
              test_ws: WindowSet, revin_eps: float = 1e-5, lambda_grid=None):
    """Fit ridge on train representations, select lambda on val, predict test.

    Predictions are made on the instance-normalized scale and mapped back
    with each test window's own statistics. Returns (predictions, model).
    """
    grid = tuple(lambda_grid) if lambda_grid else RIDGE_LAMBDA_GRID
    x_tr, y_tr, _ = _ridge_xy(train_ws, backbone, revin_eps)
    x_va, y_va, _ = _ridge_xy(val_ws, backbone, revin_eps)
    model = ridge_fit(x_tr, y_tr, x_va, y_va, lambda_grid=grid)
    x_te = window_representations(test_ws.contexts, backbone, revin_eps=revin_eps)
    _, state = revin_normalize(test_ws.contexts, eps=revin_eps)
    pred_norm = model.predict(x_te).reshape(test_ws.targets.shape)
    return revin_denormalize(pred_norm, state), model


# -- per-sector pipeline -----------------------------------------------------


@dataclass
class SectorOutcome:
    sector_id: str
    rows: list = field(default_factory=list)
    error: str | None = None


def _window_triple(sector: SectorData, cfg: RunConfig, horizon: int):
    L = cfg.model.context_len
    train_ws = make_windows(sector.splits["train"], L, horizon,
                            stride=cfg.finetune.window_stride)
    val_ws = make_windows(sector.splits["val"], L, horizon,
                          stride=cfg.experiment.eval_stride)
    test_ws = make_windows(sector.splits["test"], L, horizon,
                           stride=cfg.experiment.eval_stride)
    return train_ws, val_ws, test_ws


def _row(model: str, sector_id: str, horizon: int, preds, targets, k="") -> dict:
    mae, mse = metrics(preds, targets)
    return {"model": model, "sector_id": sector_id, "horizon": int(horizon),
            "k": k, "mae": mae, "mse": mse}


def finetune_and_score(backbone: Backbone, sector: SectorData, cfg: RunConfig,
                       horizon: int, seed: int, k="",
                       log_path=None) -> tuple[dict, ForecastHead]:
    """Fine-tune one head for one sector and horizon, score on test."""
    train_ws, _, test_ws = _window_triple(sector, cfg, horizon)
    fin = cfg.finetune
    result = finetune(train_ws.contexts, train_ws.targets, backbone, horizon,
                      epochs=fin.epochs, batch_size=fin.batch_size, lr=fin.lr,
                      seed=seed, revin_eps=cfg.model.revin_eps,
                      unfreeze_backbone=fin.unfreeze_backbone)
    if log_path is not None:
        _write_simple_log(log_path, result.log)
    preds = forecast_batch(test_ws.contexts, backbone, result.head,
                           revin_eps=cfg.model.revin_eps)
    return _row("siamtst", sector.sector_id, horizon, preds, test_ws.targets, k=k), result.head


def e1_sector_job(sector: SectorData, index: int, cfg: RunConfig, base_seed: int,
                  out_dir: Path | None) -> SectorOutcome:
    """All models on one sector; any failure poisons only this sector."""
    outcome = SectorOutcome(sector_id=sector.sector_id)
    models = cfg.experiment.models
    try:
        backbone = None
        if "siamtst" in models or "ridge" in models:
            log = None
            if out_dir is not None:
                log = out_dir / "logs" / f"pretrain_{sector.sector_id}.csv"
                log.parent.mkdir(parents=True, exist_ok=True)
            backbone = pretrain_backbone([sector], cfg,
                                         seed=derive_seed(base_seed, _NS_PRETRAIN, index),
                                         epochs=cfg.pretrain.epochs, log_path=log)
        for horizon in cfg.experiment.horizons:
            train_ws, val_ws, test_ws = _window_triple(sector, cfg, horizon)
            if "siamtst" in models:
                row, _ = finetune_and_score(
                    backbone, sector, cfg, horizon,
                    seed=derive_seed(base_seed, _NS_FINETUNE, index, horizon))
                outcome.rows.append(row)
            if "linearnet" in models:
                net = LinearNet(cfg.model.patch_len, cfg.model.num_patches,
                                cfg.model.d_model, horizon,
                                rng=np.random.default_rng(
                                    derive_seed(base_seed, _NS_LINEARNET, index, horizon)))
                train_linearnet(train_ws.contexts, train_ws.targets, net,
                                epochs=cfg.finetune.epochs,
                                batch_size=cfg.finetune.batch_size,
                                lr=cfg.finetune.lr,
                                seed=derive_seed(base_seed, _NS_LINEARNET, index, horizon),
                                revin_eps=cfg.model.revin_eps)
                preds = net.forecast(test_ws.contexts, revin_eps=cfg.model.revin_eps)
                outcome.rows.append(_row("linearnet", sector.sector_id, horizon,
                                         preds, test_ws.targets))
            if "ridge" in models:
                preds, _ = ridge_run(backbone, train_ws, val_ws, test_ws,
                                     revin_eps=cfg.model.revin_eps,
                                     lambda_grid=cfg.experiment.ridge_lambda_grid)
                outcome.rows.append(_row("ridge", sector.sector_id, horizon,
                                         preds, test_ws.targets))
            if "persistence" in models:
                preds = persistence_forecast(test_ws.contexts, horizon,
                                             period=cfg.experiment.persistence_period)
                outcome.rows.append(_row("persistence", sector.sector_id, horizon,
                                         preds, test_ws.targets))
    except Exception as exc:  # noqa: BLE001 - recorded, never silent
        logger.exception("sector %s failed", sector.sector_id)
        outcome.error = f"{type(exc).__name__}: {exc}"
        outcome.rows = []
    return outcome


def _worker_count(n_jobs: int) -> int:
    env = os.environ.get("SIAMTST_THREADS", "")
    if env.strip():
        return max(1, min(n_jobs, int(env)))
    return max(1, min(n_jobs, os.cpu_count() or 1))


def _run_jobs(jobs) -> list:
    """Run callables, possibly in parallel; result order follows input order."""
    workers = _worker_count(len(jobs))
    if workers == 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(job) for job in jobs]
        return [f.result() for f in futures]


def run_e1(cfg: RunConfig, seed: int, out_dir=None) -> dict:
    """Per-sector model comparison; returns (and optionally writes) the report."""
    out = Path(out_dir) if out_dir is not None else None
    sectors = prepare_sectors(cfg)
    jobs = [
        (lambda s=s, i=i: e1_sector_job(s, i, cfg, seed, out))
        for i, s in enumerate(sectors)
    ]
    outcomes = sorted(_run_jobs(jobs), key=lambda o: o.sector_id)
    rows = [row for o in outcomes for row in o.rows]
    failures = [{"sector_id": o.sector_id, "error": o.error}
                for o in outcomes if o.error]
    summary = assemble_summary("e1", rows, failures, cfg, seed,
                               group_key="model")
    if out is not None:
        write_outputs(out, cfg, seed, rows, summary)
    return summary


# -- E2 ----------------------------------------------------------------------


def e2_arm_job(k: int, sectors: list, cfg: RunConfig, base_seed: int,
               out_dir: Path | None) -> SectorOutcome:
    """Pre-train on the first k sectors, fine-tune and score each target.

    With k=1 and target index 0 this is exactly the single-sector
    pipeline: same seeds, same windows, same arithmetic.
    """
    outcome = SectorOutcome(sector_id=f"k={k}")
    try:
        if k < 1 or k > len(sectors):
            raise ValueError(f"k={k} needs between 1 and {len(sectors)} sectors")
        arm = sectors[:k]
        if k == 1:
            pre_seed = derive_seed(base_seed, _NS_PRETRAIN, 0)
            epochs = cfg.pretrain.epochs
        else:
            pre_seed = derive_seed(base_seed, _NS_E2_ARM, k)
            epochs = cfg.pretrain.multi_sector_epochs
        log = None
        if out_dir is not None:
            log = out_dir / "logs" / f"pretrain_k{k}.csv"
            log.parent.mkdir(parents=True, exist_ok=True)
        backbone = pretrain_backbone(arm, cfg, seed=pre_seed, epochs=epochs,
                                     log_path=log)
        for target in cfg.experiment.e2_targets:
            sector = sectors[target]
            for horizon in cfg.experiment.horizons:
                row, _ = finetune_and_score(
                    backbone, sector, cfg, horizon,
                    seed=derive_seed(base_seed, _NS_FINETUNE, target, horizon),
                    k=k)
                outcome.rows.append(row)
    except Exception as exc:  # noqa: BLE001 - recorded, never silent
        logger.exception("E2 arm k=%d failed", k)
        outcome.error = f"{type(exc).__name__}: {exc}"
        outcome.rows = []
    return outcome


def run_e2(cfg: RunConfig, seed: int, out_dir=None) -> dict:
    """Multi-sector pre-training sweep over k; returns the report."""
    out = Path(out_dir) if out_dir is not None else None
    sectors = prepare_sectors(cfg)
    if len(sectors) < 2:
        raise ValueError("E2 needs at least 2 sectors")
    for target in cfg.experiment.e2_targets:
        if not 0 <= target < len(sectors):
            raise ValueError(f"E2 target index {target} out of range")
    jobs = [
        (lambda k=k: e2_arm_job(k, sectors, cfg, seed, out))
        for k in cfg.experiment.k_list
    ]
    outcomes = _run_jobs(jobs)
    outcomes.sort(key=lambda o: (o.rows[0]["k"] if o.rows else 10 ** 9, o.sector_id))
    rows = [row for o in outcomes for row in o.rows]
    failures = [{"arm": o.sector_id, "error": o.error} for o in outcomes if o.error]
    summary = assemble_summary("e2", rows, failures, cfg, seed, group_key="k")
    if out is not None:
        write_outputs(out, cfg, seed, rows, summary)
    return summary


# -- aggregation and significance -------------------------------------------


def _mean_std(values: list) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def aggregate_rows(rows: list, group_key: str) -> list:
    """Mean and std of each metric per (horizon, group), plus rank columns."""
    grouped: dict = {}
    for row in rows:
        grouped.setdefault((row["horizon"], row[group_key]), []).append(row)
    aggregates = []
    for (horizon, group), members in sorted(grouped.items(), key=lambda x: (x[0][0], str(x[0][1]))):
        mae_mean, mae_std = _mean_std([m["mae"] for m in members])
        mse_mean, mse_std = _mean_std([m["mse"] for m in members])
        aggregates.append({
            "horizon": horizon, group_key: group, "n": len(members),
            "mae_mean": mae_mean, "mae_std": mae_std,
            "mse_mean": mse_mean, "mse_std": mse_std,
        })
    for horizon in sorted({a["horizon"] for a in aggregates}):
        block = [a for a in aggregates if a["horizon"] == horizon]
        for metric in ("mae", "mse"):
            for rank, agg in enumerate(sorted(block, key=lambda a: a[f"{metric}_mean"]), 1):
                agg[f"{metric}_rank"] = rank
    return aggregates


def pairwise_t_tests(rows: list, group_key: str) -> list:
    """Paired two-sided t-tests between groups, paired on the other keys.

    For E1 the pairing unit is the sector within one horizon; for E2 it
    is the (target sector, horizon) combination. Degenerate (zero
    variance) comparisons are flagged, not hidden.
    """
    by_group: dict = {}
    for row in rows:
        if group_key == "model":
            pair_id = (row["horizon"], row["sector_id"])
            scope = row["horizon"]
        else:
            pair_id = (row["sector_id"], row["horizon"])
            scope = "all"
        by_group.setdefault(row[group_key], {}).setdefault(scope, {})[pair_id] = row
    tests = []
    groups = sorted(by_group, key=str)
    for i, ga in enumerate(groups):
        for gb in groups[i + 1:]:
            scopes = sorted(set(by_group[ga]) & set(by_group[gb]), key=str)
            for scope in scopes:
                a_rows, b_rows = by_group[ga][scope], by_group[gb][scope]
                shared = sorted(set(a_rows) & set(b_rows), key=str)
                if len(shared) < 2:
                    continue
                for metric in ("mae", "mse"):
                    a = [a_rows[key][metric] for key in shared]
                    b = [b_rows[key][metric] for key in shared]
                    res = paired_t_test(a, b)
                    tests.append({
                        "scope": scope, "metric": metric,
                        f"{group_key}_a": ga, f"{group_key}_b": gb,
                        "n": len(shared), "statistic": res.statistic,
                        "p_value": res.p_value, "degenerate": res.degenerate,
                    })
    return tests


def assemble_summary(kind: str, rows: list, failures: list, cfg: RunConfig,
                     seed: int, group_key: str) -> dict:
    return {
        "kind": kind,
        "version": VERSION,
        "seed": int(seed),
        "config": cfg.to_dict(),
        "rows": rows,
        "failures": failures,
        "aggregates": aggregate_rows(rows, group_key),
        "t_tests": pairwise_t_tests(rows, group_key),
    }


# -- output files ------------------------------------------------------------


def write_metrics_csv(path, rows: list, seed: int, kind: str):
    """Per-run rows with provenance comments; floats use repr round-trip."""
    lines = [
        f"# kind: {kind}",
        f"# version: {VERSION}",
        f"# seed: {seed}",
        ",".join(METRIC_FIELDS),
    ]
    for row in rows:
        cells = []
        for name in METRIC_FIELDS:
            value = row.get(name, "")
            cells.append(repr(value) if isinstance(value, float) else str(value))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_metrics_csv(path) -> list:
    """Inverse of write_metrics_csv; skips provenance comments."""
    rows = []
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines()
             if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    for line in lines[1:]:
        cells = dict(zip(header, line.split(",")))
        row = {"model": cells["model"], "sector_id": cells["sector_id"],
               "horizon": int(cells["horizon"]),
               "k": int(cells["k"]) if cells.get("k") else "",
               "mae": float(cells["mae"]), "mse": float(cells["mse"])}
        rows.append(row)
    return rows


def write_summary_json(path, summary: dict):
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def write_outputs(out_dir: Path, cfg: RunConfig, seed: int, rows: list, summary: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out_dir, seed=seed)
    write_metrics_csv(out_dir / "metrics.csv", rows, seed, summary["kind"])
    write_summary_json(out_dir / "summary.json", summary)


def _write_simple_log(path, rows: list):
    """Small CSV for fine-tune and baseline loss curves."""
    if not rows:
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = list(rows[0].keys())
    lines = [",".join(fields)]
    for row in rows:
        lines.append(",".join(
            f"{row[f]:.10g}" if isinstance(row[f], float) else str(row[f])
            for f in fields))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


# -- forecast CSV ------------------------------------------------------------

FORECAST_FIELDS = ("sector_id", "feature", "horizon", "timestamp_index",
                   "y_true_norm", "y_pred_norm", "y_true_denorm", "y_pred_denorm")


def write_forecast_csv(path, sector: SectorData, horizon: int,
                       preds: np.ndarray, targets: np.ndarray,
                       window_starts, context_len: int):
    """Per-step forecasts on both scales.

    ``preds`` and ``targets`` are ``[num, N, H]`` on the normalized data
    scale; the denormalized columns undo the dataset-level transform.
    ``timestamp_index`` is the predicted step's offset within its split.
    """
    preds_raw = np.stack([sector.stats.inverse(p) for p in preds])
    targets_raw = np.stack([sector.stats.inverse(t) for t in targets])
    lines = [",".join(FORECAST_FIELDS)]
    for w in range(preds.shape[0]):
        base = int(window_starts[w]) + context_len
        for fi, feature in enumerate(sector.features):
            for step in range(horizon):
                lines.append(",".join((
                    sector.sector_id, feature, str(horizon), str(base + step),
                    repr(float(targets[w, fi, step])), repr(float(preds[w, fi, step])),
                    repr(float(targets_raw[w, fi, step])), repr(float(preds_raw[w, fi, step])),
                )))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def evaluate_forecast_csv(path) -> dict:
    """Recompute MAE/MSE from a forecast CSV's normalized columns."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split(",")
    idx = {name: header.index(name) for name in FORECAST_FIELDS}
    by_key: dict = {}
    for line in lines[1:]:
        if not line:
            continue
        cells = line.split(",")
        key = (cells[idx["sector_id"]], int(cells[idx["horizon"]]))
        by_key.setdefault(key, []).append(
            (float(cells[idx["y_pred_norm"]]), float(cells[idx["y_true_norm"]])))
    rows = []
    for (sector_id, horizon), pairs in sorted(by_key.items()):
        arr = np.asarray(pairs)
        mae, mse = metrics(arr[:, 0], arr[:, 1])
        rows.append({"model": "forecast", "sector_id": sector_id,
                     "horizon": horizon, "k": "", "mae": mae, "mse": mse})
    return {"rows": rows}


# -- single-run helpers for the CLI -----------------------------------------


def run_pretrain(cfg: RunConfig, seed: int, out_dir) -> Path:
    """Pre-train one backbone on every configured sector; save a checkpoint."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sectors = prepare_sectors(cfg)
    backbone = pretrain_backbone(sectors, cfg,
                                 seed=derive_seed(seed, _NS_PRETRAIN, 0),
                                 epochs=cfg.pretrain.epochs,
                                 log_path=out / "training_log.csv")
    echo_config(cfg, out, seed=seed)
    ckpt = out / "checkpoint.json"
    save_checkpoint(ckpt, backbone.parameters(),
                    config_echo={"model": cfg.to_dict()["model"], "seed": int(seed)})
    return ckpt


def load_backbone(cfg: RunConfig, checkpoint_path) -> Backbone:
    from .backbone import load_checkpoint, restore_parameters
    backbone = build_backbone(cfg, seed=0)
    _echo, arrays = load_checkpoint(checkpoint_path)
    restore_parameters(backbone.parameters(), arrays)
    return backbone


def run_finetune(cfg: RunConfig, seed: int, out_dir, checkpoint_path,
                 sector_index: int = 0) -> dict:
    """Fine-tune heads for every configured horizon on one sector."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sectors = prepare_sectors(cfg)
    if not 0 <= sector_index < len(sectors):
        raise ValueError(f"sector index {sector_index} out of range")
    sector = sectors[sector_index]
    backbone = load_backbone(cfg, checkpoint_path)
    echo_config(cfg, out, seed=seed)
    head_params = []
    rows = []
    for horizon in cfg.experiment.horizons:
        row, head = finetune_and_score(
            backbone, sector, cfg, horizon,
            seed=derive_seed(seed, _NS_FINETUNE, sector_index, horizon),
            log_path=out / "logs" / f"finetune_{sector.sector_id}_h{horizon}.csv")
        rows.append(row)
        head_params += [(f"h{horizon}.{name}", p) for name, p in head.parameters()]
    save_checkpoint(out / "heads.json", head_params,
                    config_echo={"horizons": list(cfg.experiment.horizons),
                                 "sector_id": sector.sector_id, "seed": int(seed)})
    summary = assemble_summary("finetune", rows, [], cfg, seed, group_key="model")
    write_outputs(out, cfg, seed, rows, summary)
    return summary


def run_forecast(cfg: RunConfig, seed: int, out_dir, checkpoint_path,
                 heads_path, sector_index: int = 0) -> list:
    """Forecast the test split with saved backbone and heads; write CSVs."""
    from .backbone import load_checkpoint
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sectors = prepare_sectors(cfg)
    sector = sectors[sector_index]
    backbone = load_backbone(cfg, checkpoint_path)
    _echo, arrays = load_checkpoint(heads_path)
    written = []
    for horizon in cfg.experiment.horizons:
        head = ForecastHead(backbone.repr_dim, horizon)
        prefix = f"h{horizon}."
        subset = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
        if not subset:
            raise ValueError(f"heads file has no parameters for horizon {horizon}")
        from .backbone import restore_parameters
        restore_parameters(head.parameters(), subset)
        _, _, test_ws = _window_triple(sector, cfg, horizon)
        preds = forecast_batch(test_ws.contexts, backbone, head,
                               revin_eps=cfg.model.revin_eps)
        path = out / f"forecast_{sector.sector_id}_h{horizon}.csv"
        write_forecast_csv(path, sector, horizon, preds, test_ws.targets,
                           test_ws.starts, cfg.model.context_len)
        written.append(path)
    echo_config(cfg, out, seed=seed)
    return written


def run_baseline(cfg: RunConfig, seed: int, out_dir, which: str,
                 sector_index: int = 0, checkpoint_path=None) -> dict:
    """Train and score one baseline on one sector; write metrics + forecasts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sectors = prepare_sectors(cfg)
    sector = sectors[sector_index]
    rows = []
    for horizon in cfg.experiment.horizons:
        train_ws, val_ws, test_ws = _window_triple(sector, cfg, horizon)
        if which == "linearnet":
            net = LinearNet(cfg.model.patch_len, cfg.model.num_patches,
                            cfg.model.d_model, horizon,
                            rng=np.random.default_rng(
                                derive_seed(seed, _NS_LINEARNET, sector_index, horizon)))
            train_linearnet(train_ws.contexts, train_ws.targets, net,
                            epochs=cfg.finetune.epochs,
                            batch_size=cfg.finetune.batch_size, lr=cfg.finetune.lr,
                            seed=derive_seed(seed, _NS_LINEARNET, sector_index, horizon),
                            revin_eps=cfg.model.revin_eps)
            preds = net.forecast(test_ws.contexts, revin_eps=cfg.model.revin_eps)
        elif which == "ridge":
            if checkpoint_path is None:
                raise ValueError("ridge baseline needs a backbone checkpoint")
            backbone = load_backbone(cfg, checkpoint_path)
            preds, _ = ridge_run(backbone, train_ws, val_ws, test_ws,
                                 revin_eps=cfg.model.revin_eps,
                                 lambda_grid=cfg.experiment.ridge_lambda_grid)
        elif which == "persistence":
            preds = persistence_forecast(test_ws.contexts, horizon,
                                         period=cfg.experiment.persistence_period)
        else:
            raise ValueError(f"unknown baseline {which!r}")
        rows.append(_row(which, sector.sector_id, horizon, preds, test_ws.targets))
        write_forecast_csv(out / f"forecast_{which}_{sector.sector_id}_h{horizon}.csv",
                           sector, horizon, preds, test_ws.targets,
                           test_ws.starts, cfg.model.context_len)
    summary = assemble_summary(f"baseline-{which}", rows, [], cfg, seed,
                               group_key="model")
    write_outputs(out, cfg, seed, rows, summary)
    return summary
