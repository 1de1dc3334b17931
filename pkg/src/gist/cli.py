"""Command-line entry point. One subcommand per pipeline stage plus
`pipeline`, which runs the whole chain and skips completed stages."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import Config, default_config, load_config
from .pipeline import STAGES, run_pipeline

STAGE_HELP = {
    "gen": "generate the synthetic two-domain dataset",
    "train-cbjt": "train encoders, distill guidance pairs, fit fusion models",
    "export-reps": "write item representation stores",
    "build-index": "validate stores and write the index manifest",
    "search": "run lifelong-sequence search for every target impression",
    "train-ctr": "train all CTR variants and write predictions",
    "eval": "compute metrics, report files, and figures",
}


def _parse_args(argv):
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="TOML config file; defaults to built-in values")
    common.add_argument("--seed", type=int, default=None,
                        help="override the master seed from the config")
    common.add_argument("--out", type=Path, default=Path("runs/default"),
                        help="artifact directory (default: runs/default)")
    parser = argparse.ArgumentParser(
        prog="gist",
        description="Cross-domain CTR engine: synthetic world, guided "
        "representation distillation, sequence search, CTR comparison.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        sub.add_parser(stage, parents=[common], help=STAGE_HELP[stage])
    pipe = sub.add_parser(
        "pipeline", parents=[common],
        help="run every stage in order, skipping completed ones",
    )
    pipe.add_argument(
        "--stages", type=str, default=None,
        help="comma-separated subset to run (reuses artifacts of earlier stages)",
    )
    return parser.parse_args(argv)


def _load(args) -> Config:
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg = replace(cfg, world=replace(cfg.world, seed=args.seed))
    return cfg


def main(argv=None) -> int:
    args = _parse_args(argv if argv is not None else sys.argv[1:])
    cfg = _load(args)
    if args.command == "pipeline":
        stages = args.stages.split(",") if args.stages else None
        report_path = run_pipeline(cfg, args.out, stages=stages)
    else:
        report_path = run_pipeline(cfg, args.out, stages=[args.command])
    if report_path.exists():
        doc = json.loads(report_path.read_text())
        gist_auc = doc["metrics"]["variants"]["gist"]["auc"]
        base = doc["metrics"]["base_variant"]
        base_auc = doc["metrics"]["variants"][base]["auc"]
        print(f"report: {report_path}")
        print(f"gist test AUC {gist_auc:.4f} vs {base} {base_auc:.4f}")
    else:
        print(f"done: {args.command} artifacts under {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
