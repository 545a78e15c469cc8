"""Guideline corpus: ingestion, truncation, train/test split, statistics.

Inputs are pre-extracted plain-text guideline files plus a JSONL manifest
(one object per line with id, title, category, file). Truncation is a hard
character cut at the generator context budget (120,000 Unicode scalar
values by default) with no word-boundary adjustment, so the truncated text
is always an exact prefix of the source.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .jsonlio import read_jsonl
from .seeds import SplitMix64
from .tokens import TokenEstimator, estimate_tokens

TRUNCATION_LIMIT = 120_000


class Category(str, Enum):
    PCDT = "pcdt"
    PROTOCOL_OF_USE = "protocol_of_use"
    ONCOLOGY_GUIDELINE = "oncology_guideline"
    NATIONAL_GUIDELINE = "national_guideline"
    CARE_PATHWAY = "care_pathway"


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"


class CorpusError(Exception):
    """Manifest or guideline file violates an ingestion precondition."""


@dataclass
class Guideline:
    id: str
    title: str
    category: Category
    raw_text: str

    @property
    def char_count(self) -> int:
        return len(self.raw_text)


@dataclass
class TruncatedGuideline:
    id: str
    text: str
    was_truncated: bool


@dataclass
class SplitAssignment:
    by_id: dict[str, Split]
    seed: int

    def split_of(self, guideline_id: str) -> Split:
        try:
            return self.by_id[guideline_id]
        except KeyError:
            raise KeyError(f"unknown guideline_id: {guideline_id!r}") from None

    def ids(self, split: Split) -> list[str]:
        return sorted(gid for gid, s in self.by_id.items() if s is split)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "assignments": {gid: s.value for gid, s in sorted(self.by_id.items())},
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SplitAssignment":
        return cls(
            by_id={gid: Split(s) for gid, s in obj["assignments"].items()},
            seed=int(obj["seed"]),
        )


@dataclass
class CorpusStats:
    n_guidelines: int
    total_chars_raw: int
    total_chars_truncated: int
    min_chars: int
    median_chars: float
    max_chars: int
    estimated_tokens: int

    def to_dict(self) -> dict:
        return {
            "n_guidelines": self.n_guidelines,
            "total_chars_raw": self.total_chars_raw,
            "total_chars_truncated": self.total_chars_truncated,
            "min_chars": self.min_chars,
            "median_chars": self.median_chars,
            "max_chars": self.max_chars,
            "estimated_tokens": self.estimated_tokens,
        }


def ingest_corpus(directory: str | Path, manifest: str | Path) -> list[Guideline]:
    """Load one Guideline per manifest row, in manifest order.

    Raises CorpusError on a missing file, duplicate id, empty file, or
    unknown category; the message always names the offending id.
    """
    directory = Path(directory)
    guidelines: list[Guideline] = []
    seen: set[str] = set()
    for row in read_jsonl(manifest):
        gid = row["id"]
        if gid in seen:
            raise CorpusError(f"duplicate id: {gid!r}")
        seen.add(gid)
        try:
            category = Category(row["category"])
        except ValueError:
            raise CorpusError(
                f"unknown category {row['category']!r} for id {gid!r}"
            ) from None
        path = directory / row["file"]
        if not path.is_file():
            raise CorpusError(f"missing file for id {gid!r}: {path}")
        raw_text = path.read_text(encoding="utf-8")
        if not raw_text:
            raise CorpusError(f"empty file for id {gid!r}: {path}")
        guidelines.append(
            Guideline(id=gid, title=row["title"], category=category, raw_text=raw_text)
        )
    return guidelines


def truncate_guideline(g: Guideline, limit: int = TRUNCATION_LIMIT) -> TruncatedGuideline:
    """Hard character cut: keep the first min(limit, char_count) characters."""
    if limit <= 0:
        raise ValueError("limit must be positive")
    truncated = g.char_count > limit
    return TruncatedGuideline(id=g.id, text=g.raw_text[:limit], was_truncated=truncated)


def assign_splits(guidelines: list[Guideline] | list[str], seed: int) -> SplitAssignment:
    """Deterministic half/half split by guideline.

    Ids are sorted lexicographically, shuffled by a splitmix64 Fisher-Yates
    pass seeded with `seed`, and the first ceil(n/2) go to Train. A pure
    function of (sorted ids, seed). Accepts Guidelines or bare id strings.
    """
    if not guidelines:
        raise CorpusError("cannot split an empty corpus")
    ids = sorted(g if isinstance(g, str) else g.id for g in guidelines)
    if len(set(ids)) != len(ids):
        raise CorpusError("guideline ids are not unique")
    rng = SplitMix64(seed)
    rng.shuffle(ids)
    n_train = (len(ids) + 1) // 2
    by_id = {gid: (Split.TRAIN if i < n_train else Split.TEST) for i, gid in enumerate(ids)}
    return SplitAssignment(by_id=by_id, seed=seed)


def corpus_stats(
    guidelines: list[Guideline],
    truncated: list[TruncatedGuideline],
    token_estimator: TokenEstimator = estimate_tokens,
) -> CorpusStats:
    """Exact character arithmetic over the corpus; min/median/max are over
    raw per-guideline character counts, estimated_tokens sums the estimator
    over the truncated texts (the training form of the corpus)."""
    if len(guidelines) != len(truncated):
        raise CorpusError(
            f"length mismatch: {len(guidelines)} guidelines vs {len(truncated)} truncated"
        )
    raw_counts = [g.char_count for g in guidelines]
    return CorpusStats(
        n_guidelines=len(guidelines),
        total_chars_raw=sum(raw_counts),
        total_chars_truncated=sum(len(t.text) for t in truncated),
        min_chars=min(raw_counts),
        median_chars=statistics.median(raw_counts),
        max_chars=max(raw_counts),
        estimated_tokens=sum(token_estimator(t.text) for t in truncated),
    )
