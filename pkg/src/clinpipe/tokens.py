"""Token counting: a character-ratio estimator and a desk-scale tokenizer.

Real tokenizers are model-specific; the pipeline only needs token counts
for accounting and a reversible id stream for packing tests, so both are
pluggable. The default estimator is ceil(chars / 3.1), computed exactly in
integer arithmetic, which maps a 16.6M-character corpus to ~5.4M tokens.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Callable

TokenEstimator = Callable[[str], int]

# chars per token for Portuguese clinical prose
_CHARS_PER_TOKEN_NUM = 31
_CHARS_PER_TOKEN_DEN = 10


def estimate_tokens(text: str) -> int:
    """ceil(len(text) / 3.1) as exact integer arithmetic: (10n + 30) // 31."""
    n = len(text)
    return (_CHARS_PER_TOKEN_DEN * n + _CHARS_PER_TOKEN_NUM - 1) // _CHARS_PER_TOKEN_NUM


class WhitespaceTokenizer:
    """Splits on whitespace and maps each token to a stable 31-bit id.

    Ids come from an optional vocabulary mapping; tokens outside it (or all
    tokens, when no vocabulary is given) hash to the first 4 bytes of their
    SHA-256, masked to 31 bits. Deterministic across runs and platforms.
    """

    def __init__(self, vocab: dict[str, int] | None = None):
        self.vocab = vocab or {}

    @classmethod
    def from_vocab_file(cls, path: str | Path) -> "WhitespaceTokenizer":
        with open(path, "r", encoding="utf-8") as f:
            vocab = json.load(f)
        return cls({str(k): int(v) for k, v in vocab.items()})

    @staticmethod
    def _hash_id(token: str) -> int:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "big") & 0x7FFFFFFF

    def __call__(self, text: str) -> list[int]:
        return [self.vocab.get(tok, self._hash_id(tok)) for tok in text.split()]
