"""Command-line entry point: ``python3 -m lspin <command> ...``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .dataset_io import load_table, save_table
from .errors import ConfigError
from .experiment import (
    ExperimentConfig,
    StageError,
    evaluate,
    export_gates,
    load_dataset,
    run_experiment,
    varying_train_size_study,
)
from .model import load_checkpoint
from .presets import PRESETS, preset


def _config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    else:
        raise ConfigError("one of --config or --preset is required")
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out(args) -> Path:
    if not args.out:
        raise ConfigError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args) -> None:
    cfg = _config(args).resolved()
    out = _out(args)
    table = load_dataset(cfg.dataset)
    save_table(table, out / "data.csv")
    print(f"wrote {table.n} rows x {table.d} features to {out / 'data.csv'}")


def cmd_train(args) -> None:
    result = run_experiment(_config(args), _out(args))
    print(result.metrics.to_json())


def cmd_replay(args) -> None:
    if not args.config:
        raise ConfigError("replay needs --config pointing at a resolved_config.json")
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    result = run_experiment(cfg, _out(args))
    print(result.metrics.to_json())


def cmd_evaluate(args) -> None:
    model = load_checkpoint(args.checkpoint)
    data = load_table(args.data)
    metrics = args.metrics.split(",") if args.metrics else ["prediction", "selection", "gates"]
    report = evaluate(model, data, metrics)
    if args.out:
        report.write(_out(args) / "metrics.json")
    print(report.to_json())


def cmd_explain(args) -> None:
    model = load_checkpoint(args.checkpoint)
    data = load_table(args.data)
    out = _out(args)
    gates = export_gates(model, data, out / "gates.csv")
    print(f"wrote {gates.shape[0]} gate rows to {out / 'gates.csv'}")


def cmd_study(args) -> None:
    sizes = [int(s) for s in args.sizes.split(",")]
    reports = varying_train_size_study(_config(args), sizes, out_dir=_out(args))
    print(json.dumps([r.values for r in reports], indent=2))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lspin", description="Locally sparse networks with per-sample gates.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", help="experiment config JSON")
            p.add_argument("--preset", help=f"bundled config: {', '.join(sorted(PRESETS))}")
            p.add_argument("--seed", type=int, help="override every seed in the config")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("generate", help="write a synthetic dataset as CSV + schema")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="run an experiment and write its result bundle")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("replay", help="rerun a resolved_config.json")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    common(p, needs_config=False)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("evaluate", help="score a checkpoint on a saved table")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="CSV written by 'generate' (schema sidecar alongside)")
    p.add_argument("--metrics", help="comma-separated metric groups")
    common(p, needs_config=False)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("explain", help="export per-sample gates, rows sorted by group")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    common(p, needs_config=False)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("study", help="train-size sweep on a fixed pool")
    common(p)
    p.add_argument("--sizes", default="480,60,30,18,12,6")
    p.set_defaults(func=cmd_study)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
