"""Triples file loading and the train/held-out split.

The wire format is one JSON object per line with keys query, positive,
and negative; direction and source ride along as provenance. This file
is the only interface to the search engine that produced the triples.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from .errors import MalformedTriplesError

REQUIRED_KEYS = ("query", "positive", "negative")


@dataclass(frozen=True)
class Triple:
    query: str
    positive: str
    negative: str
    direction: str = ""
    source: str = ""


def load_triples(path: str | Path) -> list[Triple]:
    """Parse a triples JSONL file; blank lines are tolerated.

    Raises MalformedTriplesError naming the 1-based line number when a
    line is not valid JSON, not an object, or misses a required key.
    """
    path = Path(path)
    out: list[Triple] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedTriplesError(
                    f"{path}: line {lineno}: not valid JSON ({exc.msg})"
                ) from exc
            if not isinstance(raw, dict):
                raise MalformedTriplesError(
                    f"{path}: line {lineno}: expected a JSON object"
                )
            missing = [k for k in REQUIRED_KEYS if not isinstance(raw.get(k), str)]
            if missing:
                raise MalformedTriplesError(
                    f"{path}: line {lineno}: missing string field "
                    f"{missing[0]!r}"
                )
            out.append(
                Triple(
                    query=raw["query"],
                    positive=raw["positive"],
                    negative=raw["negative"],
                    direction=str(raw.get("direction", "")),
                    source=str(raw.get("source", "")),
                )
            )
    return out


def split_triples(
    triples: list[Triple], seed: int, holdout_fraction: float = 0.1
) -> tuple[list[Triple], list[Triple]]:
    """Seeded shuffle, then hold out the last fraction for evaluation.

    Returns (train, held_out). With fewer than 2 triples the held-out
    list is empty rather than swallowing the whole input.
    """
    shuffled = list(triples)
    random.Random(seed).shuffle(shuffled)
    n_holdout = int(len(shuffled) * holdout_fraction)
    if n_holdout == 0 and len(shuffled) >= 2 and holdout_fraction > 0:
        n_holdout = 1
    if n_holdout == 0:
        return shuffled, []
    return shuffled[:-n_holdout], shuffled[-n_holdout:]
