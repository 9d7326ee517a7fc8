"""Command-line entry point: ``gled <command> [flags]``.

On failure a single line ``error=<code> reason=<message>`` goes to stderr and
the exit status is non-zero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigurationError, GledError
from .orchestrator import config as C
from .orchestrator import pipeline as P

COMMANDS = ("generate", "encode", "train-decoder", "train-propagator", "forecast", "evaluate", "ingest")
EXIT_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="run configuration (JSON)")
    common.add_argument("--case", choices=("ks", "bfs2d", "channel3d"), default="ks", help="preset used without --config")
    common.add_argument("--seed", type=int, help="base seed; stage seeds are derived from it")
    common.add_argument("--deterministic", action="store_true", help="single thread, deterministic kernels")
    common.add_argument("--out", type=Path, help="output directory (overrides the config)")

    parser = _Parser(prog="gled", description="Latent forecasting pipeline")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("generate", parents=[common], help="simulate the micro dataset")
    p.add_argument("--n-train", type=int)
    sub.add_parser("encode", parents=[common], help="restrict micro data to macro states")
    for name, what in (("train-decoder", "diffusion decoder"), ("train-propagator", "attention propagator")):
        p = sub.add_parser(name, parents=[common], help=f"train the {what}")
        p.add_argument("--epochs", type=int)
    p = sub.add_parser("forecast", parents=[common], help="roll out and decode test trajectories")
    p.add_argument("--beta-guide", type=float, help="guidance strength (0 disables guidance)")
    p.add_argument("--steps", type=int, help="number of predicted macro steps")
    sub.add_parser("evaluate", parents=[common], help="score forecasts against the truth")
    p = sub.add_parser("ingest", parents=[common], help="convert raw snapshot files to the GLED format")
    p.add_argument("files", nargs="*", type=Path)
    p.add_argument("--dims", type=int, nargs="+", required=True)
    p.add_argument("--step", type=float, required=True)
    p.add_argument("--dtype", choices=("f4", "f8"), default="f8")
    return parser


def _resolve(args) -> C.RunConfig:
    cfg = C.load_config(args.config) if args.config else C.preset(args.case)
    seeds = None
    if args.seed is not None:
        s = int(args.seed)
        seeds = {"data": s, "decoder": s + 1, "propagator": s + 2, "sampling": s + 3}
    over = {
        "out_dir": str(args.out) if args.out else None,
        "seeds": seeds,
        "ks.n_train": getattr(args, "n_train", None),
        "guidance.beta_guide": getattr(args, "beta_guide", None),
    }
    epochs = getattr(args, "epochs", None)
    if args.command == "train-decoder":
        over["diffusion.epochs"] = epochs
    elif args.command == "train-propagator":
        over["attention.epochs"] = epochs
    return C.with_overrides(cfg, **over)


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    P.configure_threads(args.deterministic)
    if args.command == "ingest":
        out = args.out or Path("data/ingested")
        man = P.ingest(args.files, args.dims, args.step, out, dtype=args.dtype)
        print(json.dumps({"manifest": str(out / "manifest.json"), "files": len(man)}))
        return 0
    cfg = _resolve(args)
    C.save_config(cfg, Path(cfg.out_dir) / "config.json")
    if args.command == "generate":
        P.generate(cfg)
    elif args.command == "encode":
        P.encode(cfg)
    elif args.command == "train-decoder":
        P.train_decoder_stage(cfg)
    elif args.command == "train-propagator":
        P.train_propagator_stage(cfg)
    elif args.command == "forecast":
        P.forecast(cfg, steps=args.steps)
    elif args.command == "evaluate":
        print(json.dumps(P.evaluate(cfg), sort_keys=True))
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    try:
        return run(argv)
    except GledError as exc:
        reason = " ".join(str(exc).split())
        print(f"error={exc.code} reason={reason}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error=persistence reason={' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
