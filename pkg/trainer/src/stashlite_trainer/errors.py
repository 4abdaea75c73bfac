"""Error taxonomy for the trainer: every failure a caller can act on."""

from __future__ import annotations


class TrainerError(Exception):
    """Base class for all trainer failures."""


class MalformedTriplesError(TrainerError):
    """A triples file line does not parse; the message names the line."""


class TooFewTriplesError(TrainerError):
    """Fewer triples than one training batch."""


class BaseModelUnavailableError(TrainerError):
    """The base model could not be loaded from the given id or path."""


class UnsupportedLossError(TrainerError):
    """A loss selector other than the supported contrastive loss."""
