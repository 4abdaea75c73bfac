"""Fine-tunes sentence embedding models on mined hard-negative triples.

The package reads one artifact, a triples JSONL file, and writes one, a
model directory with a training report. It shares no code or storage
with the search engine that mines the triples.
"""

from .config import DEFAULT_BASE_MODEL, SUPPORTED_LOSS, TrainConfig
from .data import Triple, load_triples, split_triples
from .errors import (
    BaseModelUnavailableError,
    MalformedTriplesError,
    TooFewTriplesError,
    TrainerError,
    UnsupportedLossError,
)
from .train import EvalResult, TrainReport, evaluate_triples, load_base_model, train

__all__ = [
    "DEFAULT_BASE_MODEL",
    "SUPPORTED_LOSS",
    "TrainConfig",
    "Triple",
    "load_triples",
    "split_triples",
    "BaseModelUnavailableError",
    "MalformedTriplesError",
    "TooFewTriplesError",
    "TrainerError",
    "UnsupportedLossError",
    "EvalResult",
    "TrainReport",
    "evaluate_triples",
    "load_base_model",
    "train",
]

__version__ = "0.1.0"
