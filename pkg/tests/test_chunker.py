"""Chunking: paragraph packing, window overlap, and code boundaries."""

from __future__ import annotations

import pytest

from stashlite.chunker import (
    KIND_CODE_DEFINITION,
    KIND_CODE_FALLBACK,
    KIND_PROSE,
    code_chunk,
    semantic_chunk,
)
from stashlite.errors import EmptyInputError


def words(n, prefix="w"):
    return " ".join(f"{prefix}{i}" for i in range(n))


# -- semantic ----------------------------------------------------------------

def test_empty_input_rejected():
    with pytest.raises(EmptyInputError):
        semantic_chunk("", 100, 10)
    with pytest.raises(EmptyInputError):
        semantic_chunk("   \n\n  ", 100, 10)


def test_single_paragraph_single_chunk():
    out = semantic_chunk("one short paragraph", 100, 10)
    assert len(out) == 1
    assert out[0].seq == 0
    assert out[0].kind == KIND_PROSE
    assert out[0].text == "one short paragraph"
    assert out[0].token_count == 3


def test_paragraphs_pack_until_budget():
    text = "\n\n".join([words(30, "a"), words(30, "b"), words(30, "c")])
    out = semantic_chunk(text, 70, 10)
    # a+b fit in 70, c starts a new chunk
    assert len(out) == 2
    assert out[0].token_count == 60
    assert out[1].token_count == 30
    assert [c.seq for c in out] == [0, 1]


def test_oversized_paragraph_windows_share_exact_overlap():
    text = words(100)
    out = semantic_chunk(text, 40, 10)
    assert all(c.kind == KIND_PROSE for c in out)
    assert all(c.token_count <= 40 for c in out)
    for prev, nxt in zip(out, out[1:]):
        tail = prev.text.split()[-10:]
        head = nxt.text.split()[: len(tail)]
        assert tail == head
    # every source word survives, in order
    merged = out[0].text.split()
    for c in out[1:]:
        merged.extend(c.text.split()[10:])
    assert merged == text.split()


def test_default_window_span_count():
    # 2,000 words at max 1024 / overlap 128: stride 896 gives spans at
    # 0, 896, 1792 -> 3 spans, each adjacent pair sharing exactly 128
    out = semantic_chunk(words(2000), 1024, 128)
    assert len(out) == 3
    for prev, nxt in zip(out, out[1:]):
        assert prev.text.split()[-128:] == nxt.text.split()[:128]


def test_sequences_are_contiguous_from_zero():
    text = "\n\n".join(words(20, f"p{i}") for i in range(6))
    out = semantic_chunk(text, 25, 5)
    assert [c.seq for c in out] == list(range(len(out)))


# -- code --------------------------------------------------------------------

PY_SRC = '''import os

CONSTANT = 1

@decorator
def first(x):
    return x + 1

def second(y):
    if y:
        def inner():
            return 2
    return y

class Things:
    def method(self):
        return self
'''


def test_python_boundaries_at_column_zero():
    out = code_chunk(PY_SRC, "python", 1024)
    texts = [c.text for c in out]
    # preamble, then one block per top-level declaration
    assert texts[0].startswith("import os")
    assert any(t.startswith("@decorator\ndef first") for t in texts)
    assert any(t.startswith("def second") for t in texts)
    assert any(t.startswith("class Things") for t in texts)
    # the nested def must not open a block
    assert not any(t.lstrip().startswith("def inner") for t in texts)
    assert all(c.kind == KIND_CODE_DEFINITION for c in out)


def test_decorator_stays_with_its_function():
    out = code_chunk(PY_SRC, "python", 1024)
    block = next(t.text for t in out if "def first" in t.text)
    assert block.splitlines()[0] == "@decorator"


def test_nested_methods_stay_inside_class_span():
    out = code_chunk(PY_SRC, "python", 1024)
    block = next(c.text for c in out if c.text.startswith("class Things"))
    assert "def method" in block


def test_code_reconstructs_source():
    out = code_chunk(PY_SRC, "python", 1024)
    assert "\n".join(c.text for c in out).splitlines() == [
        ln for ln in PY_SRC.splitlines()
    ]


def test_unknown_language_falls_back_to_semantic():
    out = code_chunk("plain prose here", "unknown", 100)
    assert out[0].kind == KIND_PROSE


def test_oversized_block_degrades_to_fallback_windows():
    body = "\n".join(f"    x{i} = {i}" for i in range(120))
    src = f"def big():\n{body}\n"
    out = code_chunk(src, "python", 30)
    assert any(c.kind == KIND_CODE_FALLBACK for c in out)
    assert all(c.token_count <= 30 for c in out)


def test_definition_bodies_never_split():
    # indent balance oracle: every code_definition span that opens a
    # definition also contains that definition's whole indented body
    src = "def a():\n    x = 1\n    return x\n\ndef b():\n    return 2\n"
    out = code_chunk(src, "python", 1024)
    for span in out:
        if span.kind != KIND_CODE_DEFINITION:
            continue
        lines = span.text.splitlines()
        if lines and lines[0].startswith("def "):
            # body lines after the header must all be indented
            assert all(ln.startswith((" ", "\t")) or not ln for ln in lines[1:])


def test_go_and_rust_starters():
    go = 'package main\n\nfunc a() {\n}\n\nfunc b() {\n}\n'
    out = code_chunk(go, "go", 1024)
    assert sum(1 for c in out if c.text.startswith("func ")) == 2

    rust = 'use std;\n\nfn one() {}\n\npub fn two() {}\n\nimpl Thing {\n}\n'
    out = code_chunk(rust, "rust", 1024)
    starts = [c.text.splitlines()[0] for c in out]
    assert "fn one() {}" in starts
    assert "pub fn two() {}" in starts
    assert "impl Thing {" in starts


def test_code_sequences_contiguous():
    out = code_chunk(PY_SRC, "python", 1024)
    assert [c.seq for c in out] == list(range(len(out)))
