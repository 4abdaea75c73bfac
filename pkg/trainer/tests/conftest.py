"""Shared fixture: a tiny randomly initialized encoder so every test
runs offline."""

from __future__ import annotations

import os

import pytest

os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")

import torch
from sentence_transformers import SentenceTransformer
from transformers import BertConfig, BertModel, BertTokenizer

try:
    from sentence_transformers.sentence_transformer import modules as st_modules
except ImportError:
    from sentence_transformers import models as st_modules

# one vocabulary for the whole suite: 16 query-side concepts, 16
# document-side concepts, and 20 neutral filler words
WORDS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
WORDS += [f"qq{i}" for i in range(16)]
WORDS += [f"pp{i}" for i in range(16)]
WORDS += [f"word{i}" for i in range(20)]


@pytest.fixture(scope="session")
def base_model_dir(tmp_path_factory) -> str:
    """A 2-layer, 32-dim encoder with deterministic random weights,
    saved in the layout the trainer loads. Built once per session."""
    root = tmp_path_factory.mktemp("base_model")
    hf_dir = root / "hf"
    torch.manual_seed(7)
    config = BertConfig(
        vocab_size=len(WORDS),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=64,
    )
    BertModel(config).save_pretrained(hf_dir)
    vocab = {w: i for i, w in enumerate(WORDS)}
    BertTokenizer(vocab=vocab, do_lower_case=True).save_pretrained(hf_dir)

    st_dir = root / "st"
    transformer = st_modules.Transformer(str(hf_dir), max_seq_length=32)
    dimension_of = getattr(
        transformer, "get_embedding_dimension", None
    ) or transformer.get_word_embedding_dimension
    pooling = st_modules.Pooling(dimension_of(), pooling_mode="mean")
    SentenceTransformer(modules=[transformer, pooling], device="cpu").save(
        str(st_dir)
    )
    return str(st_dir)
