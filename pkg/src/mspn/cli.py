"""Command line: ``mspn {train,infer,eval,flops,make-synth}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import RunConfig
from .exceptions import ConfigError, InvalidInputError, SchemaError, TrainingDivergedError


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mspn", description="Multi-stage top-down pose estimation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--output-dir", help="override output_dir from the config")

    i = sub.add_parser("infer", help="predict keypoints for detector or ground-truth boxes")
    i.add_argument("--config", required=True)
    i.add_argument("--ckpt", required=True)
    i.add_argument("--boxes", default="gt", help="COCO results-format detection JSON, or 'gt'")
    i.add_argument("--flip-test", action="store_true", default=None)
    i.add_argument("--no-flip-test", dest="flip_test", action="store_false")
    i.add_argument("--out", help="predictions file (default <output_dir>/predictions.json)")

    e = sub.add_parser("eval", help="score a predictions file")
    e.add_argument("--pred", required=True)
    e.add_argument("--ann", required=True)
    e.add_argument("--out", help="directory for metrics.json and audit.csv (default: next to --pred)")
    e.add_argument("--pck-px", type=float, action="append", default=[],
                   help="also report PCK at this pixel threshold (repeatable)")

    f = sub.add_parser("flops", help="static multiply-accumulate count")
    f.add_argument("--config", required=True)

    m = sub.add_parser("make-synth", help="render a synthetic stick-figure dataset")
    m.add_argument("--n", type=int, required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            cfg = RunConfig.load(args.config)
            res = pipeline.train(cfg, args.resume, args.output_dir)
            print(json.dumps({"checkpoint": str(res.checkpoint), "loss_csv": str(res.loss_csv),
                              "iterations_run": res.iterations_run}))
        elif args.command == "infer":
            cfg = RunConfig.load(args.config)
            out = pipeline.infer(cfg, args.ckpt, args.boxes, args.flip_test, args.out)
            print(str(out))
        elif args.command == "eval":
            out_dir = args.out or str(Path(args.pred).parent)
            rep = pipeline.evaluate(args.pred, args.ann, out_dir, args.pck_px)
            print(json.dumps(rep.metrics(), indent=2, sort_keys=True))
        elif args.command == "flops":
            cfg = RunConfig.load(args.config)
            print(json.dumps(pipeline.flops_summary(cfg), indent=2))
        elif args.command == "make-synth":
            man = pipeline.synth(args.n, args.seed, args.out)
            print(json.dumps({"images": len(man.images), "instances": len(man.instances),
                              "annotations": str(Path(args.out) / "annotations.json")}))
    except (ConfigError, SchemaError, InvalidInputError, TrainingDivergedError, FileNotFoundError) as exc:
        print(f"mspn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
