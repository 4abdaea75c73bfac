"""Triples file parsing and the seeded held-out split."""

from __future__ import annotations

import json

import pytest

from stashlite_trainer import (
    MalformedTriplesError,
    Triple,
    load_triples,
    split_triples,
)

from triple_fixtures import write_triples

ROWS = [
    {"query": "qq0", "positive": "pp0", "negative": "pp1",
     "direction": "dense_blind_spot", "source": "a.md"},
    {"query": "qq1 word2", "positive": "pp1", "negative": "pp2",
     "direction": "lexical_blind_spot", "source": "b.md"},
]


def test_load_round_trip(tmp_path):
    path = tmp_path / "t.jsonl"
    write_triples(path, ROWS)
    triples = load_triples(path)
    assert triples == [
        Triple("qq0", "pp0", "pp1", "dense_blind_spot", "a.md"),
        Triple("qq1 word2", "pp1", "pp2", "lexical_blind_spot", "b.md"),
    ]


def test_blank_lines_are_tolerated(tmp_path):
    path = tmp_path / "t.jsonl"
    body = json.dumps(ROWS[0]) + "\n\n\n" + json.dumps(ROWS[1]) + "\n"
    path.write_text(body, encoding="utf-8")
    assert len(load_triples(path)) == 2


def test_missing_provenance_fields_default_to_empty(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text(
        json.dumps({"query": "q", "positive": "p", "negative": "n"}) + "\n",
        encoding="utf-8",
    )
    (t,) = load_triples(path)
    assert (t.direction, t.source) == ("", "")


def test_bad_json_names_the_line(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text(
        json.dumps(ROWS[0]) + "\n{not json\n", encoding="utf-8"
    )
    with pytest.raises(MalformedTriplesError, match="line 2"):
        load_triples(path)


def test_non_object_line_names_the_line(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text('[1, 2, 3]\n', encoding="utf-8")
    with pytest.raises(MalformedTriplesError, match="line 1"):
        load_triples(path)


def test_missing_field_names_line_and_field(tmp_path):
    path = tmp_path / "t.jsonl"
    rows = [ROWS[0], {"query": "q", "positive": "p"}]
    write_triples(path, rows)
    with pytest.raises(MalformedTriplesError, match="line 2.*negative"):
        load_triples(path)


def test_non_string_field_is_malformed(tmp_path):
    path = tmp_path / "t.jsonl"
    write_triples(path, [{"query": "q", "positive": 7, "negative": "n"}])
    with pytest.raises(MalformedTriplesError, match="line 1.*positive"):
        load_triples(path)


def test_split_holds_out_last_tenth_after_seeded_shuffle():
    triples = [Triple(f"q{i}", "p", "n") for i in range(100)]
    train, held = split_triples(triples, seed=42)
    assert len(train) == 90
    assert len(held) == 10
    assert sorted(t.query for t in train + held) == sorted(
        t.query for t in triples
    )
    # same seed, same split; a different seed shuffles differently
    again_train, again_held = split_triples(triples, seed=42)
    assert again_train == train and again_held == held
    other_train, _ = split_triples(triples, seed=43)
    assert other_train != train


def test_split_never_swallows_everything():
    triples = [Triple(f"q{i}", "p", "n") for i in range(3)]
    train, held = split_triples(triples, seed=1)
    assert len(held) == 1  # rounds down to 0, bumped to 1
    assert len(train) == 2

    single = [Triple("q", "p", "n")]
    train, held = split_triples(single, seed=1)
    assert train == single and held == []


def test_split_zero_fraction_keeps_all_for_training():
    triples = [Triple(f"q{i}", "p", "n") for i in range(20)]
    train, held = split_triples(triples, seed=9, holdout_fraction=0.0)
    assert len(train) == 20 and held == []
