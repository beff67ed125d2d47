"""Command-line entry point.

Exit codes: 0 success, 2 configuration error (bad flags, bad config file,
invalid settings), 3 I/O error (missing or unreadable files).
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from . import harness
from .harness import ConfigError


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sorb", description="goal-distance learning + graph search")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("train", "train value ensembles and save checkpoints"),
        ("eval", "success-vs-distance curves for saved checkpoints"),
        ("sweep", "ablation sweep over one axis"),
        ("generalize", "evaluate a multi-maze checkpoint on held-out mazes"),
        ("distcheck", "audit predicted vs oracle distances"),
    ):
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", help="JSON config file (defaults apply when omitted)")
        s.add_argument("--checkpoint", help="checkpoint directory (from a train run)")
        s.add_argument("--out", help="output directory (overrides config out_dir)")
        s.add_argument("--seed", type=int, help="run a single seed instead of config seeds")
        s.add_argument("--map", help="map name or map file (overrides the checkpoint's map)")
    return p


def _load(args) -> harness.RunConfig:
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    return cfg


def _need_checkpoint(args) -> str:
    if not args.checkpoint:
        raise ConfigError(f"{args.command} requires --checkpoint")
    return args.checkpoint


def main(argv: Optional[list] = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:  # argparse already printed the message
        return int(e.code or 0)
    try:
        cfg = _load(args)
        if args.command == "train":
            if args.map:
                cfg.map.name = args.map
                cfg.map.file = args.map if args.map.endswith(".map") else None
            out = harness.cmd_train(cfg, args.out)
        elif args.command == "eval":
            out = harness.cmd_eval(cfg, _need_checkpoint(args), args.out, args.map)
        elif args.command == "sweep":
            out = harness.cmd_sweep(cfg, _need_checkpoint(args), args.out, args.map)
        elif args.command == "generalize":
            out = harness.cmd_generalize(cfg, _need_checkpoint(args), args.out)
        else:
            out = harness.cmd_distcheck(cfg, _need_checkpoint(args), args.out, args.map)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3
    except ValueError as e:  # unreadable artifacts (corrupt checkpoint, bad map file)
        print(f"i/o error: {e}", file=sys.stderr)
        return 3
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
