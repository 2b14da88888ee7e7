"""Command-line front end: ``odsd <command> --config PATH [--seed N] [--out DIR]``."""
import argparse
import os
import sys

from . import pipeline
from .config import ExperimentConfig
from .errors import OdsdError
from .gradcheck import TERMS

COMMANDS = ("synth", "train-teacher", "score", "sample", "distill", "eval", "gradcheck", "embed")


def build_parser():
    parser = argparse.ArgumentParser(prog="odsd", description="Open-world sampling and distillation experiments.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "synth": "generate the synthetic train/test/pool datasets",
        "train-teacher": "train the teacher classifier",
        "score": "score the unlabeled pool with the teacher",
        "sample": "select items from the scored pool",
        "distill": "train the student on the selection",
        "eval": "print a checkpoint's accuracy on a labeled dataset",
        "gradcheck": "finite-difference check of every analytic gradient",
        "embed": "export teacher/student Gram embeddings",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="config file (section.key = value lines); defaults apply if omitted")
        p.add_argument("--seed", type=int, help="override every *.seed field")
        p.add_argument("--out", help="override paths.out")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
        if name == "distill":
            p.add_argument("--resume", action="store_true", help="continue from the student checkpoint")
            p.add_argument("--stop-after", type=int, metavar="EPOCHS", help="stop once this many epochs are done")
        if name == "eval":
            p.add_argument("--checkpoint", help="checkpoint directory (default: paths.student)")
            p.add_argument("--data", help="labeled dataset directory (default: paths.test)")
        if name == "gradcheck":
            # harness self-test hooks
            p.add_argument("--corrupt", action="append", default=[], choices=TERMS, help=argparse.SUPPRESS)
            p.add_argument("--degenerate", action="store_true", help=argparse.SUPPRESS)
    return parser


def load_config(args):
    cfg = ExperimentConfig.load(args.config, args.set)
    if args.out is not None:
        # --out is relative to the working directory, not the config file
        cfg = cfg.replace(paths__out=os.path.abspath(args.out))
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        cmd = args.command
        if cmd == "distill":
            pipeline.cmd_distill(cfg, resume=args.resume, stop_after=args.stop_after)
        elif cmd == "eval":
            pipeline.cmd_eval(cfg, checkpoint=args.checkpoint, data=args.data)
        elif cmd == "gradcheck":
            if not pipeline.cmd_gradcheck(cfg, corrupt=args.corrupt, degenerate=args.degenerate)["passed"]:
                return 1
        else:
            getattr(pipeline, "cmd_" + cmd.replace("-", "_"))(cfg)
    except (OdsdError, OSError) as exc:
        print(f"odsd {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
