"""
Command-line entry point: maggie synth|train|eval|infer|bench

Exit codes: 0 ok, 1 training aborted, 2 input or config error, 3 checkpoint incompatible,
4 bench scaling bounds violated (with --check).
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import torch

from .config import RunConfig, load_config
from .errors import CompatibilityError, ConfigError, GenerationError, InputValidationError, TrainingError
from .logging_utils import setup_logging

logger = logging.getLogger("maggie")

EXIT_OK = 0
EXIT_TRAINING = 1
EXIT_INPUT = 2
EXIT_COMPAT = 3
EXIT_CHECK = 4


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="TOML config file")
    parser.add_argument("--seed", type=int, default=None, help="Random seed")
    parser.add_argument("--deterministic", action="store_true", help="Deterministic torch kernels")
    parser.add_argument("--device", type=str, default=None, help="torch device (cpu, cuda)")
    parser.add_argument("--out", type=Path, default=None, help="Output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maggie", description="Mask-guided instance matting toolkit")
    parser.add_argument("--log-level", type=str, default="INFO", help="Logging level")
    parser.add_argument("--json-logs", action="store_true", help="Emit JSON log records")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Synthesize a dataset")
    _common(p)
    p.add_argument("--tier", type=str, default=None, help="easy, medium, hard or image")
    p.add_argument("--count", type=int, default=None, help="Number of samples")
    p.add_argument("--frames", type=int, default=None, help="Frames per clip")
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--instances", type=int, default=None, help="Instances per sample")
    p.add_argument("--mask-mode", type=str, default=None, help="train or eval guidance masks")
    p.add_argument("--assets", type=Path, default=None, help="Asset store (procedural assets if omitted)")

    p = sub.add_parser("train", help="Train a model")
    _common(p)
    p.add_argument("--data", type=Path, default=None, help="Dataset directory")
    p.add_argument("--steps", type=int, default=None, help="Total optimisation steps")
    p.add_argument("--resume", type=str, nargs="?", const="latest", default=None,
                   help="Resume from a checkpoint (latest in --out when no path is given)")
    p.add_argument("--force", action="store_true", help="Resume despite a config hash mismatch")

    p = sub.add_parser("eval", help="Evaluate a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--data", type=Path, default=None, help="Dataset directory")
    p.add_argument("--identity", action="store_true", help="Score ground truth against itself")
    p.add_argument("--force", action="store_true", help="Ignore config hash mismatch")

    p = sub.add_parser("infer", help="Matte a frame sequence")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--frames", type=Path, required=True, help="Directory of PNG frames")
    p.add_argument("--masks", type=Path, required=True, help="Directory with one mask sub-directory per instance")
    p.add_argument("--preview", action="store_true", help="Also write checkerboard previews")
    p.add_argument("--force", action="store_true", help="Ignore config hash mismatch")

    p = sub.add_parser("bench", help="Instance-count scaling benchmark")
    _common(p)
    p.add_argument("--checkpoint", type=Path, default=None, help="Randomly initialised model if omitted")
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--instances", type=int, nargs="+", default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--no-sequential", action="store_true", help="Skip the one-instance-at-a-time loop")
    p.add_argument("--check", action="store_true", help="Fail (exit 4) when the scaling bounds are violated")
    p.add_argument("--force", action="store_true", help="Ignore config hash mismatch")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    if args.seed is not None:
        out["seed"] = args.seed
    if args.deterministic:
        out["deterministic"] = True
    if args.device is not None:
        out["device"] = args.device
    if args.out is not None:
        out["out_dir"] = args.out

    data: Dict[str, Any] = {"root": getattr(args, "data", None)}
    if args.command == "synth":
        data.update(
            tier=args.tier,
            count=args.count,
            frames=args.frames,
            height=args.height,
            width=args.width,
            num_instances=args.instances,
            mask_mode=args.mask_mode,
            asset_root=args.assets,
        )
    data = {k: v for k, v in data.items() if v is not None}
    if data:
        out["data"] = data
    if getattr(args, "steps", None) is not None:
        out["optim"] = {"steps": args.steps}
    if args.command == "bench":
        bench = {"resolution": args.resolution, "instance_counts": args.instances, "runs": args.runs}
        bench = {k: v for k, v in bench.items() if v is not None}
        if bench:
            out["bench"] = bench
    return out


def cmd_synth(args, config: RunConfig) -> int:
    from .synth import generate_dataset

    out = args.out or config.data.root
    written = generate_dataset(config.data, config.seed, out)
    print(f"{len(written)} samples written to {out}")
    return EXIT_OK


def cmd_train(args, config: RunConfig) -> int:
    from .trainer import Trainer

    trainer = Trainer(config, config.data.root, config.out_dir)
    if args.resume is not None:
        trainer.resume(None if args.resume == "latest" else Path(args.resume), force=args.force)
    trainer.fit()
    return EXIT_OK


def cmd_eval(args, config: RunConfig) -> int:
    from .checkpoint import write_json
    from .evaluate import evaluate, print_report

    if args.checkpoint is None and not args.identity:
        raise InputValidationError("eval needs --checkpoint or --identity")
    report = evaluate(config, config.data.root, args.checkpoint, identity=args.identity, force=args.force)
    config.out_dir.mkdir(parents=True, exist_ok=True)
    path = config.out_dir / "report.json"
    write_json(path, report.model_dump(mode="json"))
    print_report(report)
    logger.info("report written to %s", path)
    return EXIT_OK


def cmd_infer(args, config: RunConfig) -> int:
    from .evaluate import load_model
    from .inference import run_inference

    model = load_model(args.checkpoint, config, force=args.force)
    run_inference(model, args.frames, args.masks, config.out_dir, preview=args.preview, device=config.device)
    return EXIT_OK


def cmd_bench(args, config: RunConfig) -> int:
    from .bench import benchmark, print_bench, scaling_failures
    from .checkpoint import write_json
    from .evaluate import load_model
    from .model import MaggieNet

    if args.checkpoint is not None:
        model = load_model(args.checkpoint, config, force=args.force)
    else:
        model = MaggieNet(config.model)
    b = config.bench
    rows = benchmark(model, b.resolution, b.instance_counts, b.runs, b.warmup, config.device, not args.no_sequential)
    print_bench(rows)
    failures = scaling_failures(rows, b.max_ratio, b.min_sequential_ratio)
    config.out_dir.mkdir(parents=True, exist_ok=True)
    write_json(config.out_dir / "bench.json", {"rows": [r.model_dump() for r in rows], "failures": failures})
    if args.check and failures:
        for msg in failures:
            logger.error("scaling bound violated: %s", msg)
        return EXIT_CHECK
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "bench": cmd_bench,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level, args.json_logs)
    try:
        config = load_config(args.config, **_overrides(args))
        if config.deterministic:
            torch.use_deterministic_algorithms(True, warn_only=True)
        torch.manual_seed(config.seed)
        return COMMANDS[args.command](args, config)
    except CompatibilityError as e:
        logger.error("%s", e)
        return EXIT_COMPAT
    except GenerationError as e:
        logger.error("%s %s", e, e.diagnostics)
        return EXIT_INPUT
    except (InputValidationError, ConfigError, FileNotFoundError) as e:
        logger.error("%s", e)
        return EXIT_INPUT
    except TrainingError as e:
        logger.error("%s (batch dump: %s)", e, e.dump_path)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
