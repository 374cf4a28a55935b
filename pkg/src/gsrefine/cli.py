"""Command-line entry point.

Subcommands: synth (build a seeded synthetic dataset), init (coarse scene
construction), train (splat optimization with refinement rounds), eval
(score a checkpoint), render (rasterize a checkpoint along the trajectory).

Exit status is 0 on success. On failure a single machine-parseable line
"error: <category>: <message>" goes to stderr and the status is nonzero.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import (PROFILES, PipelineConfig, apply_profile, parse_config,
                     serialize_config)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gsrefine",
                                     description="inconsistency-aware splat "
                                                 "refinement pipeline")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None,
                        help="key=value config file")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    common.add_argument("--profile", choices=sorted(PROFILES), default=None,
                        help="preset bundle applied before the config file")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common],
                   help="generate a synthetic dataset")
    sub.add_parser("init", parents=[common],
                   help="lift the reference view into a point cloud and "
                        "write masks plus the initial video")
    sub.add_parser("train", parents=[common],
                   help="optimize the splat field with refinement rounds")
    sub.add_parser("eval", parents=[common],
                   help="report depth correlation, psnr and mask overlap")
    render = sub.add_parser("render", parents=[common],
                            help="rasterize a checkpoint along the trajectory")
    render.add_argument("--checkpoint", type=str, default=None,
                        help="splat field file (default: trained checkpoint)")
    return parser


def load_pipeline_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if args.profile:
        apply_profile(cfg, args.profile)
    if args.config:
        cfg = parse_config(Path(args.config), base=cfg)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    cfg.train.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_pipeline_config(args)
        from . import pipeline
        if args.command == "synth":
            out = pipeline.cmd_synth(cfg)
            print(f"dataset written to {out}")
        elif args.command == "init":
            out = pipeline.cmd_init(cfg)
            print(f"init artifacts written to {out}")
        elif args.command == "train":
            out = pipeline.cmd_train(cfg)
            print(f"train artifacts written to {out}")
        elif args.command == "eval":
            report = pipeline.cmd_eval(cfg)
            sys.stdout.write(pipeline.format_report(report))
        elif args.command == "render":
            out = pipeline.cmd_render(cfg, checkpoint=args.checkpoint)
            print(f"renders written to {out}")
        # persist the resolved configuration next to the outputs for replay
        if args.command in ("synth", "init", "train"):
            out_dir = Path(cfg.output_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / f"config_{args.command}.txt").write_text(
                serialize_config(cfg))
        return 0
    except Exception as exc:  # noqa: BLE001 - single exit point for the CLI
        category = getattr(exc, "category", "internal-error")
        print(f"error: {category}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
