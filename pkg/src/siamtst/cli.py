"""Command-line surface.

Subcommands: generate, pretrain, finetune, forecast, baseline
{linearnet|ridge|persistence}, evaluate, e1, e2, report. Every
subcommand takes ``--config <json>`` plus the overrides ``--seed`` and
``--out``. Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .data import export_csv, generate_dataset, SyntheticProfile
from .experiments import (evaluate_forecast_csv, run_baseline, run_e1, run_e2,
                          run_finetune, run_forecast, run_pretrain,
                          write_metrics_csv)
from .report import generate_report

logger = logging.getLogger("siamtst")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this tool reserves 2 for runtime."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_common(sub):
    sub.add_argument("--config", default=None, help="JSON config file")
    sub.add_argument("--seed", type=int, default=None, help="override the run seed")
    sub.add_argument("--out", default=None, help="output directory")


def build_parser() -> _Parser:
    parser = _Parser(prog="siamtst",
                     description="Masked Siamese pre-training for hourly "
                                 "multivariate KPI forecasting.")
    subs = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("generate", "write synthetic sector CSVs"),
        ("pretrain", "pre-train a backbone and save a checkpoint"),
        ("finetune", "fine-tune forecast heads on a frozen backbone"),
        ("forecast", "forecast the test split with saved weights"),
        ("baseline", "train and score a reference model"),
        ("evaluate", "recompute metrics from a forecast CSV"),
        ("e1", "per-sector model comparison"),
        ("e2", "multi-sector pre-training sweep"),
        ("report", "render figures and plot-ready CSVs from results"),
    ):
        sub = subs.add_parser(name, help=help_text)
        _add_common(sub)
        if name == "finetune":
            sub.add_argument("--checkpoint", required=True, help="backbone checkpoint")
            sub.add_argument("--sector", type=int, default=0, help="sector index")
        elif name == "forecast":
            sub.add_argument("--checkpoint", required=True, help="backbone checkpoint")
            sub.add_argument("--heads", required=True, help="heads checkpoint")
            sub.add_argument("--sector", type=int, default=0)
        elif name == "baseline":
            sub.add_argument("which", choices=("linearnet", "ridge", "persistence"))
            sub.add_argument("--checkpoint", default=None,
                             help="backbone checkpoint (ridge only)")
            sub.add_argument("--sector", type=int, default=0)
        elif name == "evaluate":
            sub.add_argument("forecast_csv", help="file written by forecast/baseline")
        elif name == "report":
            sub.add_argument("results", help="directory written by e1/e2/forecast")
    return parser


def _config(args) -> RunConfig:
    return load_config(args.config)


def _seed(args, cfg: RunConfig) -> int:
    if args.seed is not None:
        return args.seed
    return int(cfg.experiment.seeds[0]) if cfg.experiment.seeds else 0


def _out(args, default: str) -> Path:
    return Path(args.out) if args.out else Path(default)


def _cmd_generate(args) -> int:
    cfg = _config(args)
    seed = args.seed if args.seed is not None else cfg.data.seed
    out = _out(args, "data")
    out.mkdir(parents=True, exist_ok=True)
    profile = SyntheticProfile(phase_jitter=cfg.data.phase_jitter)
    for series in generate_dataset(seed, cfg.data.n_sectors, cfg.data.hours, profile):
        export_csv(series, out / f"{series.sector_id}.csv")
    logger.info("wrote %d sector CSVs to %s", cfg.data.n_sectors, out)
    return 0


def _cmd_pretrain(args) -> int:
    cfg = _config(args)
    ckpt = run_pretrain(cfg, _seed(args, cfg), _out(args, "runs/pretrain"))
    logger.info("checkpoint: %s", ckpt)
    return 0


def _cmd_finetune(args) -> int:
    cfg = _config(args)
    run_finetune(cfg, _seed(args, cfg), _out(args, "runs/finetune"),
                 args.checkpoint, sector_index=args.sector)
    return 0


def _cmd_forecast(args) -> int:
    cfg = _config(args)
    paths = run_forecast(cfg, _seed(args, cfg), _out(args, "runs/forecast"),
                         args.checkpoint, args.heads, sector_index=args.sector)
    for path in paths:
        logger.info("wrote %s", path)
    return 0


def _cmd_baseline(args) -> int:
    cfg = _config(args)
    run_baseline(cfg, _seed(args, cfg), _out(args, f"runs/baseline-{args.which}"),
                 args.which, sector_index=args.sector,
                 checkpoint_path=args.checkpoint)
    return 0


def _cmd_evaluate(args) -> int:
    result = evaluate_forecast_csv(args.forecast_csv)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out / "metrics.csv", result["rows"],
                          seed=args.seed if args.seed is not None else 0,
                          kind="evaluate")
    for row in result["rows"]:
        print(f"{row['sector_id']} H={row['horizon']} "
              f"mae={row['mae']:.6f} mse={row['mse']:.6f}")
    return 0


def _cmd_e1(args) -> int:
    cfg = _config(args)
    summary = run_e1(cfg, _seed(args, cfg), _out(args, "runs/e1"))
    _print_aggregates(summary)
    return 0


def _cmd_e2(args) -> int:
    cfg = _config(args)
    summary = run_e2(cfg, _seed(args, cfg), _out(args, "runs/e2"))
    _print_aggregates(summary)
    return 0


def _cmd_report(args) -> int:
    written = generate_report(args.results, out_dir=args.out)
    for path in written:
        logger.info("wrote %s", path)
    return 0


def _print_aggregates(summary: dict):
    group_key = "model" if summary["kind"] == "e1" else "k"
    for agg in summary["aggregates"]:
        print(f"H={agg['horizon']} {group_key}={agg[group_key]} "
              f"mae={agg['mae_mean']:.4f}±{agg['mae_std']:.4f} "
              f"mse={agg['mse_mean']:.4f}±{agg['mse_std']:.4f}")
    if summary["failures"]:
        print(f"failures: {summary['failures']}", file=sys.stderr)


_COMMANDS = {
    "generate": _cmd_generate,
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "forecast": _cmd_forecast,
    "baseline": _cmd_baseline,
    "evaluate": _cmd_evaluate,
    "e1": _cmd_e1,
    "e2": _cmd_e2,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        logger.error("%s: %s", type(exc).__name__, exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
