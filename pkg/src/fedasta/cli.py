"""Command-line driver.

    python -m fedasta <command> [--config FILE] [--set key=value ...] [--output-dir DIR]

Commands: ``train``, ``evaluate``, ``build-graph``, ``privacy-sim``,
``comm-report``, ``ablate``, ``edge-sweep``. Exit codes: 0 success, 1 runtime failure,
2 configuration error. ``FEDASTA_OUTPUT_DIR`` overrides the output directory.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import OUTPUT_ENV, ExperimentConfig, load_config, parse_config, render
from .errors import ConfigurationError, FedastaError
from .experiments import (
    ablation_table,
    edge_sweep,
    edge_sweep_csv,
    edge_table,
    graph_summary,
    privacy_csv,
    privacy_sim,
    run_ablation,
)
from .protocol import CommSetting, Federation, comm_setting_for, comm_table, reports_to_csv

log = logging.getLogger("fedasta")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _header(cfg: ExperimentConfig) -> str:
    return f"# config_hash={cfg.config_hash()}\n"


def _write(out: Path, name: str, text: str, cfg: ExperimentConfig) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(_header(cfg) + text)
    log.info("wrote %s", path)
    return path


def _metrics_csv(rows: list[tuple[str, object]]) -> str:
    lines = ["split,mae,mape,rmse"]
    lines += [f"{split},{m.mae!r},{m.mape!r},{m.rmse!r}" for split, m in rows]
    return "\n".join(lines) + "\n"


def _metrics_table(rows: list[tuple[str, object]]) -> str:
    lines = [f"{'split':<8}{'MAE':>12}{'MAPE(%)':>12}{'RMSE':>12}"]
    lines += [f"{s:<8}{m.mae:>12.4f}{m.mape:>12.2f}{m.rmse:>12.4f}" for s, m in rows]
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------------
# commands


def cmd_train(cfg: ExperimentConfig) -> Federation:
    ds = cfg.data.load()
    fed = Federation(ds, cfg.train_config())
    reports = fed.train()
    out = cfg.output_path()
    _write(out, "rounds.csv", reports_to_csv(reports), cfg)
    arrays = dict(fed.state_arrays())
    arrays["config_hash"] = np.array(cfg.config_hash())
    out.mkdir(parents=True, exist_ok=True)
    np.savez(out / "checkpoint.npz", **arrays)
    rows = [("val", fed.evaluate("val").metrics), ("test", fed.evaluate("test").metrics)]
    _write(out, "metrics.csv", _metrics_csv(rows), cfg)
    print(_metrics_table(rows), end="")
    return fed


def cmd_evaluate(cfg: ExperimentConfig, checkpoint: str | None = None) -> list:
    ds = cfg.data.load()
    fed = Federation(ds, cfg.train_config())
    out = cfg.output_path()
    ckpt = Path(checkpoint) if checkpoint else out / "checkpoint.npz"
    try:
        with np.load(ckpt) as z:
            arrays = {k: z[k] for k in z.files}
    except OSError as e:
        raise ConfigurationError(f"cannot read checkpoint {ckpt}: {e}") from None
    fed.load_state_arrays(arrays)
    rows = [(s, fed.evaluate(s).metrics) for s in ("train", "val", "test")]
    _write(out, "evaluation.csv", _metrics_csv(rows), cfg)
    print(_metrics_table(rows), end="")
    return rows


def cmd_build_graph(cfg: ExperimentConfig) -> str:
    ds = cfg.data.load()
    tcfg = replace(cfg.train_config(), no_dynamic_graph=False)
    out = cfg.output_path()
    fed = Federation(ds, tcfg)
    fed.build_graphs()
    sched = fed.server.schedule
    arrays = {"static_mask": fed.server.static_mask, "bounds": sched.period_boundaries,
              "config_hash": np.array(cfg.config_hash())}
    for p, m in enumerate(sched.masks):
        arrays[f"dynamic_mask{p}"] = m
    out.mkdir(parents=True, exist_ok=True)
    np.savez(out / "graphs.npz", **arrays)
    summary = f"k={tcfg.k} periods={sched.n_periods}\n" + graph_summary(ds, sched)
    _write(out, "graph_summary.txt", summary, cfg)
    print(summary, end="")
    return summary


def cmd_privacy_sim(cfg: ExperimentConfig) -> str:
    ds = cfg.data.load()
    p = cfg.privacy
    rows = privacy_sim(ds, cfg.train_config(), p.intensities, p.thresholds, p.attack_steps, p.attack_lr, p.seed,
                       cfg.noise if cfg.noise.target != "off" else None)
    text = privacy_csv(rows)
    _write(cfg.output_path(), "privacy.csv", text, cfg)
    print(text, end="")
    return text


def cmd_comm_report(cfg: ExperimentConfig) -> str:
    parts = ["reference setting (307 nodes, 1.15 MB of client weights)\n", comm_table(CommSetting())]
    try:
        ds = cfg.data.load()
        fed = Federation(ds, cfg.train_config())
        parts += ["\nthis configuration\n", comm_table(comm_setting_for(fed))]
    except FedastaError as e:
        log.warning("skipping configuration-derived table: %s", e)
    text = "".join(parts)
    _write(cfg.output_path(), "comm_report.txt", text, cfg)
    print(text, end="")
    return text


def cmd_ablate(cfg: ExperimentConfig, seeds: int = 1) -> str:
    ds = cfg.data.load()
    res = run_ablation(ds, cfg.train_config(), seeds=tuple(range(cfg.train.seed, cfg.train.seed + seeds)))
    text = ablation_table(res)
    _write(cfg.output_path(), "ablation.txt", text, cfg)
    print(text, end="")
    return text


def cmd_edge_sweep(cfg: ExperimentConfig) -> str:
    ds = cfg.data.load()
    res = edge_sweep(ds, cfg.train_config(), cfg.sweep.k)
    _write(cfg.output_path(), "edge_sweep.csv", edge_sweep_csv(res), cfg)
    text = edge_table(res)
    _write(cfg.output_path(), "edge_sweep.txt", text, cfg)
    print(text, end="")
    return text


# ----------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedasta", description="Federated spatio-temporal forecasting experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one setting")
        p.add_argument("--output-dir", help=f"output directory (also {OUTPUT_ENV})")
        return p

    common(sub.add_parser("train", help="train and write checkpoint, round reports and metrics"))
    ev = common(sub.add_parser("evaluate", help="score a checkpoint on every split"))
    ev.add_argument("--checkpoint", help="checkpoint file (default: <output>/checkpoint.npz)")
    common(sub.add_parser("build-graph", help="build static and per-period dynamic masks"))
    common(sub.add_parser("privacy-sim", help="reconstruction attack sweep over noise intensity"))
    common(sub.add_parser("comm-report", help="communication cost of the three strategies"))
    ab = common(sub.add_parser("ablate", help="train every ablation variant"))
    ab.add_argument("--seeds", type=int, default=1)
    common(sub.add_parser("edge-sweep", help="train once per edge count in sweep.k"))
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    text = render(load_config(args.config)) if args.config else ""
    if args.set:
        for item in args.set:
            if "=" not in item:
                raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        text += "".join(f"{s}\n" for s in args.set)
    if args.output_dir:
        text += f"output.dir = {args.output_dir}\n"
    return parse_config(text)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "train":
            cmd_train(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.checkpoint)
        elif args.command == "build-graph":
            cmd_build_graph(cfg)
        elif args.command == "privacy-sim":
            cmd_privacy_sim(cfg)
        elif args.command == "comm-report":
            cmd_comm_report(cfg)
        elif args.command == "ablate":
            cmd_ablate(cfg, args.seeds)
        elif args.command == "edge-sweep":
            cmd_edge_sweep(cfg)
    except ConfigurationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FedastaError, OSError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK
