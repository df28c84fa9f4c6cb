#!/usr/bin/env python3
"""
Command line interface for dualstr
Usage: dualstr gen-vocab --out vocab/
       dualstr gen-data --out data/train --count 5000 --seed 1 --vocab vocab/train.txt
       dualstr train --config desk.ini --data data/train --out runs/desk
       dualstr --coverage eval --checkpoint runs/desk/final.ckpt --data data/heldout
"""

# Standard library imports
import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

# Third-party imports (conditionally loaded)
try:
    import coverage

    COVERAGE_AVAILABLE = True
except ImportError:
    COVERAGE_AVAILABLE = False

from dualstr.config import RunConfig, load_run_config
from dualstr.errors import EXIT_DATA, DualStrError, UsageError

logger = logging.getLogger(__name__)

EXIT_INTERRUPTED = 130


class _Parser(argparse.ArgumentParser):
    """Argument errors exit with the usage code instead of argparse's default 2."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _config(path: Optional[str], required: Sequence[tuple[str, str]] = ()) -> RunConfig:
    return load_run_config(Path(path) if path else None, required)


def cmd_gen_vocab(args: argparse.Namespace) -> int:
    from dualstr.data.vocab import make_vocabularies, write_vocab

    vocab = make_vocabularies(
        args.train_count,
        args.heldout_count,
        args.seed,
        min_length=args.min_length,
        max_length=args.max_length,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_vocab(out / "train.txt", vocab.train)
    write_vocab(out / "heldout.txt", vocab.heldout)
    print(f"train\t{len(vocab.train)}")
    print(f"heldout\t{len(vocab.heldout)}")
    return 0


def cmd_gen_data(args: argparse.Namespace) -> int:
    from dualstr.data.io import write_dataset
    from dualstr.data.render import CATEGORIES, generate_samples, parse_corruptions
    from dualstr.data.vocab import read_vocab

    config = _config(args.config)
    words = read_vocab(Path(args.vocab))
    corruptions = parse_corruptions(args.corruptions)
    samples = generate_samples(
        words,
        args.count,
        args.seed,
        corruptions,
        image_h=config.model.image_h,
        image_w=config.model.image_w,
        workers=args.workers,
    )
    counts = write_dataset(Path(args.out), samples)
    for category in CATEGORIES:
        if counts[category]:
            print(f"{category}\t{counts[category]}")
    print(f"total\t{len(samples)}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    from dualstr.data.io import Dataset
    from dualstr.model import DualBranchRecognizer
    from dualstr.training.loop import train_loop

    config = _config(args.config, required=[("optim", "total_steps"), ("optim", "batch")])
    if args.seed is not None:
        config = config.with_overrides(train={"seed": args.seed})
    m = config.model
    dataset = Dataset.load(Path(args.data), m.image_h, m.image_w)
    eval_dataset = (
        Dataset.load(Path(args.eval_data), m.image_h, m.image_w) if args.eval_data else None
    )
    model = DualBranchRecognizer(config)
    result = train_loop(
        model,
        dataset,
        config,
        Path(args.out),
        resume=Path(args.resume) if args.resume else None,
        eval_dataset=eval_dataset,
    )
    best = "n/a" if result.best_accuracy is None else f"{result.best_accuracy:.4f}"
    print(f"step\t{result.step}")
    print(f"best_accuracy\t{best}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    from dualstr.data.io import Dataset
    from dualstr.data.metrics import format_accuracy
    from dualstr.data.render import CATEGORIES
    from dualstr.training.checkpoint import load_model
    from dualstr.training.loop import OUTPUTS, evaluate

    config = _config(args.config) if args.config else None
    model = load_model(Path(args.checkpoint), config)
    m = model.config.model
    dataset = Dataset.load(Path(args.data), m.image_h, m.image_w)
    report = evaluate(model, dataset)
    print("\t".join(["output", "overall", *CATEGORIES]))
    for output in OUTPUTS:
        per_tag = [format_accuracy(report.per_category[output][c]) for c in CATEGORIES]
        print("\t".join([output, format_accuracy(report.overall[output]), *per_tag]))
    if args.dump:
        with open(args.dump, "w", encoding="utf-8") as f:
            for relpath, gt, tags, p in zip(
                dataset.relpaths, dataset.labels, dataset.tags, report.predictions
            ):
                f.write(f"{relpath}\t{gt}\t{p.visual}\t{p.cross}\t{p.final}\t{','.join(tags)}\n")
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    from dualstr.data.io import load_image, resize_image
    from dualstr.decoding import DecodePolicy, predict
    from dualstr.training.checkpoint import load_model

    model = load_model(Path(args.checkpoint))
    m, d = model.config.model, model.config.decode
    policy = DecodePolicy(
        refine_iters=d.refine_iters if args.refine_iters is None else args.refine_iters,
        fast_cross=d.fast_cross or args.fast_cross,
        refine_visual_context=d.refine_visual_context,
    )
    failures = 0
    for path in args.image:
        try:
            image = resize_image(load_image(Path(path)), m.image_h, m.image_w)
            p = predict(model, image, policy)
        except DualStrError as e:
            failures += 1
            print(f"{path}\tERROR\t{e.message}")
            continue
        print(f"{path}\t{p.visual}\t{p.cross}\t{p.final}")
    return 0 if not failures else EXIT_DATA


def cmd_inspect_masks(args: argparse.Namespace) -> int:
    import numpy as np

    from dualstr.masks import render_mask, sample_training_masks

    rng = np.random.default_rng(args.seed)
    masks = sample_training_masks(args.k, args.n, rng, pairing=args.pairing)
    names = {0: "L2R", 1: "R2L"}
    for i, mask in enumerate(masks):
        if i:
            print()
        print(f"mask {i} {names.get(i, 'random')}")
        print(render_mask(mask))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="dualstr",
        description="Dual-branch scene text recognition at desk scale",
        epilog="Examples:\n"
        "  dualstr gen-vocab --out vocab --train-count 200 --heldout-count 50\n"
        "  dualstr gen-data --out data/train --count 5000 --seed 1 --vocab vocab/train.txt\n"
        "  dualstr gen-data --out data/clean --count 100 --seed 7 --vocab vocab/train.txt --corruptions clean\n"
        "  dualstr train --config desk.ini --data data/train --out runs/desk\n"
        "  dualstr train --config desk.ini --data data/train --out runs/desk --resume runs/desk/last.ckpt\n"
        "  dualstr eval --checkpoint runs/desk/final.ckpt --data data/heldout --dump preds.tsv\n"
        "  dualstr predict --checkpoint runs/desk/final.ckpt --image a.ppm b.ppm\n"
        "  dualstr inspect-masks --n 4 --k 6 --seed 0\n"
        "  dualstr -v train ...          # Execute with verbose logging\n"
        "  dualstr -d train ...          # Execute with debug logging\n"
        "  dualstr --coverage eval ...   # Execute with code coverage analysis",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument(
        "-d",
        "--debug",
        action="store_true",
        help="Enable debug mode with detailed logging",
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="store_true",
        help="Enable verbose output with INFO level logging",
    )
    parser.add_argument(
        "--coverage",
        action="store_true",
        help="Enable code coverage analysis",
    )
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-vocab", help="Draw disjoint train and held-out word lists")
    p.add_argument("--out", required=True, help="Directory for train.txt and heldout.txt")
    p.add_argument("--train-count", type=int, default=200)
    p.add_argument("--heldout-count", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-length", type=int, default=3)
    p.add_argument("--max-length", type=int, default=8)
    p.set_defaults(func=cmd_gen_vocab)

    p = sub.add_parser("gen-data", help="Render a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vocab", required=True, help="Word list, one word per line")
    p.add_argument(
        "--corruptions",
        default="clean,rotated,blurred,occluded,perspective",
        help="Comma-separated categories to draw from",
    )
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--config", help="Config file supplying the image size")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="Train a recognizer")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="Override [train] seed")
    p.add_argument("--resume", help="Checkpoint to continue from")
    p.add_argument("--eval-data", help="Dataset for periodic evaluation")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Report word accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="Build the model from this config instead")
    p.add_argument("--dump", help="Write per-sample predictions to this file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="Recognize the text in images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", nargs="+", required=True)
    p.add_argument("--refine-iters", type=int, help="Override [decode] refine_iters")
    p.add_argument("--fast-cross", action="store_true", help="Single-pass cross decode")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("inspect-masks", help="Print sampled training masks")
    p.add_argument("--n", type=int, default=4, help="Mask size: characters + 1")
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pairing", action="store_true")
    p.set_defaults(func=cmd_inspect_masks)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, execute one command and return its exit code."""
    from dualstr.logging_config import configure_logging

    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required")
    except UsageError as e:
        print(f"Error: {e.message}", file=sys.stderr)
        return e.exit_code

    # Configure logging based on debug and verbose flags
    if args.debug:
        configure_logging("DEBUG")
    elif args.verbose:
        configure_logging("INFO")
    else:
        configure_logging("WARNING")

    # Check for coverage flag and initialize if available
    cov = None
    if args.coverage:
        if COVERAGE_AVAILABLE:
            # generate a short unique suffix without using uuid
            cov = coverage.Coverage(data_suffix=str(hash(os.times())))
            cov.start()
        else:
            print(
                "Warning: Coverage module not available. Install with 'pip install coverage'",
                file=sys.stderr,
            )

    try:
        return args.func(args)
    except KeyboardInterrupt:
        print("\nOperation canceled by user.", file=sys.stderr)
        return EXIT_INTERRUPTED
    except DualStrError as e:
        logger.debug("Command failed", exc_info=True)
        print(f"Error: {e.message}", file=sys.stderr)
        return e.exit_code
    finally:
        if cov is not None:
            cov.stop()
            cov.save()


def main() -> None:
    """Main entry point for the CLI application."""
    sys.exit(run())


if __name__ == "__main__":
    main()
