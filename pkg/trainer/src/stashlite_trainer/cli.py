"""stashlite-trainer command line entry point."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import DEFAULT_BASE_MODEL, SUPPORTED_LOSS, TrainConfig
from .errors import TrainerError
from .train import train

BASE_MODEL_ENV = "STASHLITE_TRAINER_BASE_MODEL"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stashlite-trainer",
        description=(
            "Fine-tune a sentence embedding model on mined "
            "(query, positive, hard negative) triples"
        ),
    )
    parser.add_argument("--triples", required=True, help="triples JSONL file")
    parser.add_argument("--out", required=True, help="model output directory")
    parser.add_argument("--epochs", type=int, default=2)
    parser.add_argument("--lr", type=float, default=3e-6)
    parser.add_argument("--batch", type=int, default=64)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument(
        "--base-model",
        default=os.environ.get(BASE_MODEL_ENV, DEFAULT_BASE_MODEL),
        help=f"base model id or local path (or ${BASE_MODEL_ENV})",
    )
    parser.add_argument(
        "--loss",
        default=SUPPORTED_LOSS,
        help="loss selector; only 'mnrl' is supported",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = TrainConfig(
            triples_path=args.triples,
            output_dir=args.out,
            base_model_id=args.base_model,
            epochs=args.epochs,
            learning_rate=args.lr,
            batch_size=args.batch,
            seed=args.seed,
            loss=args.loss,
        )
        report = train(config)
    except (TrainerError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(report.to_json(), indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
