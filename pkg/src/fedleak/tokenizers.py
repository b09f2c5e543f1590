"""Tokenization for annotated corpora.

Two deterministic schemes: one token per Unicode codepoint (suits CJK text,
where there is no whitespace segmentation) and whitespace-delimited words.
``auto`` picks codepoint tokens when any CJK character is present in the
corpus, whitespace tokens otherwise. All downstream token/offset arithmetic
(PII locations, prefix windows, extraction matching) assumes the corpus was
tokenized with a single scheme.
"""

from __future__ import annotations

import re
from typing import Iterable

from .errors import ConfigurationError

_WORD_RE = re.compile(r"\S+")

_CJK_RANGES = (
    (0x2E80, 0x2EFF),   # radicals
    (0x3000, 0x303F),   # CJK punctuation
    (0x3040, 0x30FF),   # kana
    (0x3400, 0x4DBF),   # extension A
    (0x4E00, 0x9FFF),   # unified ideographs
    (0xF900, 0xFAFF),   # compatibility ideographs
    (0xFF00, 0xFFEF),   # fullwidth forms
)

MODES = ("codepoint", "whitespace")


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


class Tokenizer:
    """Deterministic text <-> token-sequence conversion."""

    def __init__(self, mode: str):
        if mode not in MODES:
            raise ConfigurationError(f"unknown tokenizer mode: {mode!r}")
        self.mode = mode

    def tokenize(self, text: str) -> list[str]:
        if self.mode == "codepoint":
            return list(text)
        return text.split()

    def token_spans(self, text: str) -> list[tuple[int, int]]:
        """Character (start, end) of each token, in token order."""
        if self.mode == "codepoint":
            return [(i, i + 1) for i in range(len(text))]
        return [m.span() for m in _WORD_RE.finditer(text)]

    def join(self, tokens: Iterable[str]) -> str:
        sep = "" if self.mode == "codepoint" else " "
        return sep.join(tokens)

    def __repr__(self) -> str:
        return f"Tokenizer({self.mode!r})"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Tokenizer) and other.mode == self.mode


def detect_mode(texts: Iterable[str]) -> str:
    for text in texts:
        if any(_is_cjk(ch) for ch in text):
            return "codepoint"
    return "whitespace"


def resolve_tokenizer(mode: str, texts: Iterable[str] = ()) -> Tokenizer:
    """Resolve a mode name ('auto' inspects the texts) to a tokenizer."""
    if mode == "auto":
        mode = detect_mode(texts)
    return Tokenizer(mode)
