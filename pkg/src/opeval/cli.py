"""Command line entry point: ``opeval collect|fit|ope|cdope|ops|run|report``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig
from .errors import OpevalError
from .pipeline import STAGES, default_workers, run_pipeline
from .report import KINDS, emit_plot_data

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="experiment config JSON (built-in defaults when omitted)")
    common.add_argument("--seed", type=int, default=None, help="override the master seed")
    common.add_argument("--out", type=Path, default=Path("runs/default"), help="output directory")
    common.add_argument("--workers", type=int, default=None,
                        help="worker processes per stage (default: $OPEVAL_WORKERS or 1)")
    common.add_argument("--force", action="store_true", help="recompute even when cached")

    p = argparse.ArgumentParser(prog="opeval", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        sub.add_parser(stage, parents=[common], help=f"run the {stage} stage only")
    sub.add_parser("run", parents=[common], help="run every stage in order")
    rep = sub.add_parser("report", parents=[common], help="emit plot data from finished stages")
    rep.add_argument("--kind", choices=KINDS + ("all",), default="all")
    rep.add_argument("--dataset", default=None, help="dataset id for the cdf export")
    rep.add_argument("--behavior", default=None, help="behavior policy for the topk export")
    rep.add_argument("--target", default="policy_value")
    rep.add_argument("--no-svg", action="store_true")
    return p


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config is not None else ExperimentConfig().validate()
    return cfg.with_seed(args.seed)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers: must be >= 1")
    except ConfigError as err:
        print(f"opeval: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    workers = args.workers if args.workers is not None else default_workers()
    try:
        if args.command == "report":
            kinds = KINDS if args.kind == "all" else (args.kind,)
            for kind in kinds:
                files = emit_plot_data(args.out, kind, dataset=args.dataset, behavior=args.behavior,
                                       target=args.target, svg=not args.no_svg)
                print(f"{kind}: {len(files)} series files")
            return EXIT_OK
        stages = STAGES if args.command == "run" else (args.command,)
        manifest = run_pipeline(cfg, args.out, stages, workers, args.force)
    except ConfigError as err:
        print(f"opeval: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OpevalError as err:
        print(f"opeval: {args.command} failed: {err}", file=sys.stderr)
        return EXIT_STAGE
    except Exception as err:  # any other failure inside a stage
        print(f"opeval: {args.command} failed: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_STAGE
    for stage in stages:
        rec = manifest["stages"][stage]
        print(f"{stage:8s} {rec['status']:7s} {rec['key'][:12]}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
