"""Contrastive fine-tuning over mined triples.

The loop feeds (query, positive, hard negative) columns to a
multiple-negatives ranking loss: each query scores against every
positive in the batch plus every explicit hard negative, and learns to
rank its own positive first. Per-triplet losses that push one negative
at a time are deliberately not offered; see config.LOSS_REJECTION_MESSAGE.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from sentence_transformers import SentenceTransformer

try:
    from sentence_transformers.sentence_transformer.losses import (
        MultipleNegativesRankingLoss,
    )
except ImportError:
    from sentence_transformers.losses import MultipleNegativesRankingLoss

from .config import TrainConfig
from .data import Triple, load_triples, split_triples
from .errors import BaseModelUnavailableError, TooFewTriplesError

REPORT_FILENAME = "training_report.json"


@dataclass(frozen=True)
class EvalResult:
    """Held-out triple accuracy: positive closer to the query than the
    hard negative, by cosine distance."""

    accuracy: float
    evaluated: int
    skipped: int


@dataclass(frozen=True)
class TrainReport:
    base_model_id: str
    epochs: int
    learning_rate: float
    batch_size: int
    seed: int
    loss: str
    triples_used: int
    train_size: int
    held_out_size: int
    loss_curve: tuple[float, ...]
    final_loss: float
    accuracy_before: float | None
    accuracy_after: float | None
    skipped_held_out: int
    max_seq_length: int
    output_dir: str

    def to_json(self) -> dict:
        return {
            "base_model_id": self.base_model_id,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "loss": self.loss,
            "triples_used": self.triples_used,
            "train_size": self.train_size,
            "held_out_size": self.held_out_size,
            "loss_curve": list(self.loss_curve),
            "final_loss": self.final_loss,
            "accuracy_before": self.accuracy_before,
            "accuracy_after": self.accuracy_after,
            "skipped_held_out": self.skipped_held_out,
            "max_seq_length": self.max_seq_length,
            "output_dir": self.output_dir,
        }


def load_base_model(model_id: str) -> SentenceTransformer:
    """Load the base model from a local path or registry id."""
    try:
        return SentenceTransformer(model_id, device="cpu")
    except Exception as exc:
        raise BaseModelUnavailableError(
            f"cannot load base model {model_id!r}: {exc}"
        ) from exc


def evaluate_triples(
    model: SentenceTransformer, triples: Sequence[Triple]
) -> EvalResult:
    """Fraction of triples whose positive is strictly closer to the
    query than the hard negative. Triples with an empty positive or
    negative text are skipped and tallied, not judged."""
    if not triples:
        raise ValueError("evaluate_triples needs a non-empty triple list")
    usable = [t for t in triples if t.positive.strip() and t.negative.strip()]
    skipped = len(triples) - len(usable)
    if not usable:
        return EvalResult(accuracy=0.0, evaluated=0, skipped=skipped)

    texts = []
    for t in usable:
        texts.extend((t.query, t.positive, t.negative))
    vecs = model.encode(
        texts, batch_size=64, convert_to_numpy=True, show_progress_bar=False
    )
    vecs = np.asarray(vecs, dtype=np.float64)
    norms = np.linalg.norm(vecs, axis=1)
    norms[norms == 0.0] = 1.0
    vecs = vecs / norms[:, None]

    correct = 0
    for i in range(len(usable)):
        q, p, n = vecs[3 * i], vecs[3 * i + 1], vecs[3 * i + 2]
        d_pos = 1.0 - float(np.dot(q, p))
        d_neg = 1.0 - float(np.dot(q, n))
        if d_pos < d_neg:
            correct += 1
    return EvalResult(
        accuracy=correct / len(usable), evaluated=len(usable), skipped=skipped
    )


def _batches(items: list[Triple], size: int) -> list[list[Triple]]:
    return [items[i : i + size] for i in range(0, len(items), size)]


def train(cfg: TrainConfig) -> TrainReport:
    """Fine-tune the base model on the triples file and write the model
    directory plus a JSON report next to it.

    The held-out split is taken after a seeded shuffle, so repeated runs
    with one seed see identical train and evaluation sets.
    """
    triples = load_triples(cfg.triples_path)
    if len(triples) < cfg.batch_size:
        raise TooFewTriplesError(
            f"{cfg.triples_path}: {len(triples)} triples parsed but one "
            f"batch needs {cfg.batch_size}; mine more data or lower the "
            f"batch size"
        )

    model = load_base_model(cfg.base_model_id)
    train_set, held_out = split_triples(
        triples, cfg.seed, cfg.holdout_fraction
    )
    before = evaluate_triples(model, held_out) if held_out else None

    torch.manual_seed(cfg.seed)
    rng = random.Random(cfg.seed)
    loss_fn = MultipleNegativesRankingLoss(model)
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate)
    featurize = getattr(model, "preprocess", None) or model.tokenize

    model.train()
    loss_curve: list[float] = []
    for _epoch in range(cfg.epochs):
        order = list(train_set)
        rng.shuffle(order)
        epoch_losses: list[float] = []
        for batch in _batches(order, cfg.batch_size):
            features = [
                featurize([t.query for t in batch]),
                featurize([t.positive for t in batch]),
                featurize([t.negative for t in batch]),
            ]
            optimizer.zero_grad()
            loss = loss_fn(features, None)
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
        loss_curve.append(sum(epoch_losses) / len(epoch_losses))
    model.eval()

    after = evaluate_triples(model, held_out) if held_out else None

    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    model.save(str(cfg.output_dir))
    report = TrainReport(
        base_model_id=cfg.base_model_id,
        epochs=cfg.epochs,
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        loss=cfg.loss,
        triples_used=len(triples),
        train_size=len(train_set),
        held_out_size=len(held_out),
        loss_curve=tuple(loss_curve),
        final_loss=loss_curve[-1],
        accuracy_before=None if before is None else before.accuracy,
        accuracy_after=None if after is None else after.accuracy,
        skipped_held_out=0 if before is None else before.skipped,
        max_seq_length=int(model.max_seq_length),
        output_dir=str(cfg.output_dir),
    )
    report_path = cfg.output_dir / REPORT_FILENAME
    report_path.write_text(
        json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return report
