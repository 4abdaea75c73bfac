"""Text and source-code chunking.

Tokens here are whitespace-split words; nothing linguistic. Prose is
packed paragraph-by-paragraph, and only a single oversized paragraph gets
the sliding window treatment. Code is split at column-0 definition lines
per language so a span is a whole top-level definition; indentation keeps
nested definitions from starting spans by construction.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import EmptyInputError

DEFAULT_MAX_TOKENS = 1024
DEFAULT_OVERLAP = 128

KIND_PROSE = "prose"
KIND_CODE_DEFINITION = "code_definition"
KIND_CODE_FALLBACK = "code_fallback"

_PARAGRAPH_RE = re.compile(r"\n\s*\n")

# column-0 span starters per language; the leading anchor is implicit in
# .match(). These are deliberately dumb: a regex pass, not a parser.
_LANGUAGE_STARTERS: dict[str, re.Pattern[str]] = {
    "python": re.compile(r"(?:def |class |async def )"),
    "js_ts": re.compile(r"(?:function |class |export )"),
    "go": re.compile(r"(?:func )"),
    "rust": re.compile(r"(?:fn |pub fn |impl |struct |enum )"),
    "java": re.compile(r"(?:public |private |protected |class )"),
}

EXTENSION_LANGUAGES = {
    ".py": "python",
    ".js": "js_ts",
    ".jsx": "js_ts",
    ".ts": "js_ts",
    ".tsx": "js_ts",
    ".go": "go",
    ".rs": "rust",
    ".java": "java",
}


@dataclass(frozen=True)
class ChunkSpan:
    seq: int
    text: str
    token_count: int
    kind: str


def _words(text: str) -> list[str]:
    return text.split()


def semantic_chunk(
    text: str,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    overlap: int = DEFAULT_OVERLAP,
) -> list[ChunkSpan]:
    """Paragraph-respecting chunks of at most max_tokens words.

    Consecutive paragraphs are packed while they fit; packed chunks never
    overlap. A single paragraph longer than max_tokens becomes a word
    sliding window where consecutive windows share exactly `overlap`
    words.
    """
    if max_tokens <= 0:
        raise ValueError("max_tokens must be positive")
    if not 0 <= overlap < max_tokens:
        raise ValueError("overlap must satisfy 0 <= overlap < max_tokens")
    if not text or not text.strip():
        raise EmptyInputError("no text to chunk")

    paragraphs = [p.strip() for p in _PARAGRAPH_RE.split(text) if p.strip()]
    pieces: list[tuple[str, str]] = []  # (text, kind)

    pack: list[str] = []
    pack_tokens = 0

    def flush() -> None:
        nonlocal pack, pack_tokens
        if pack:
            pieces.append(("\n\n".join(pack), KIND_PROSE))
            pack = []
            pack_tokens = 0

    for para in paragraphs:
        words = _words(para)
        if len(words) > max_tokens:
            flush()
            for window in _sliding_windows(words, max_tokens, overlap):
                pieces.append((" ".join(window), KIND_PROSE))
            continue
        if pack and pack_tokens + len(words) > max_tokens:
            flush()
        pack.append(para)
        pack_tokens += len(words)
    flush()

    return [
        ChunkSpan(seq=i, text=t, token_count=len(_words(t)), kind=k)
        for i, (t, k) in enumerate(pieces)
    ]


def _sliding_windows(words: list[str], max_tokens: int, overlap: int):
    stride = max_tokens - overlap
    start = 0
    while True:
        window = words[start : start + max_tokens]
        yield window
        if start + max_tokens >= len(words):
            return
        start += stride


def code_chunk(
    source: str,
    language: str,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> list[ChunkSpan]:
    """Split source at column-0 definition starters for the language.

    Column-0 decorator/annotation lines (leading "@") attach to the
    definition below them. A span that exceeds max_tokens is re-split by
    blank line; any piece that still exceeds it is cut into fixed word
    windows with zero overlap and marked code_fallback. Languages without
    a starter table fall back to semantic chunking.
    """
    if not source or not source.strip():
        raise EmptyInputError("no source to chunk")
    starter = _LANGUAGE_STARTERS.get(language)
    if starter is None:
        # keep the default 1/8 overlap ratio at any window size
        return semantic_chunk(source, max_tokens, min(DEFAULT_OVERLAP, max_tokens // 8))

    lines = source.splitlines()
    boundaries: list[int] = []
    for i, line in enumerate(lines):
        if starter.match(line):
            j = i
            while j > 0 and lines[j - 1].startswith("@"):
                j -= 1
            if not boundaries or j > boundaries[-1]:
                boundaries.append(j)

    starts = boundaries if boundaries else []
    blocks: list[str] = []
    if not starts:
        blocks.append(source)
    else:
        if starts[0] > 0:
            head = "\n".join(lines[: starts[0]])
            if head.strip():
                blocks.append(head)
        for bi, start in enumerate(starts):
            end = starts[bi + 1] if bi + 1 < len(starts) else len(lines)
            blocks.append("\n".join(lines[start:end]))

    pieces: list[tuple[str, str]] = []
    for block in blocks:
        words = _words(block)
        if len(words) <= max_tokens:
            pieces.append((block, KIND_CODE_DEFINITION))
            continue
        for part in _PARAGRAPH_RE.split(block):
            if not part.strip():
                continue
            part_words = _words(part)
            if len(part_words) <= max_tokens:
                pieces.append((part, KIND_CODE_DEFINITION))
            else:
                for i in range(0, len(part_words), max_tokens):
                    window = part_words[i : i + max_tokens]
                    pieces.append((" ".join(window), KIND_CODE_FALLBACK))

    return [
        ChunkSpan(seq=i, text=t, token_count=len(_words(t)), kind=k)
        for i, (t, k) in enumerate(pieces)
    ]
