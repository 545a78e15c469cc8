"""Benchmark construction: paired true/false assertions and open QA items.

Generator responses must follow a structured block layout (ITEM n headers
with labeled fields) demanded by the prompt. The parser is strict: a
response that does not contain exactly the requested number of well-formed
blocks raises rather than yielding partial items, because silent partial
parses would corrupt the 50/50 balance. Failed generations are re-requested
once before the error propagates.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .corpus import Split, SplitAssignment, TruncatedGuideline
from .gateway import Backend, ChatRequest, complete
from .prompts import load_template
from .seeds import SplitMix64

DEFAULT_N_PAIRS = 5
DEFAULT_N_QUESTIONS = 5


class Label(str, Enum):
    TRUE = "true"
    FALSE = "false"


class PerturbedDetail(str, Enum):
    DOSAGE = "dosage"
    ROUTE = "route"
    INTERVAL = "interval"
    OTHER = "other"


class QAKind(str, Enum):
    BROAD = "broad"
    SPECIFIC = "specific"


class BenchmarkError(Exception):
    """Base class for benchmark construction/validation failures."""


class UnparseableGeneration(BenchmarkError):
    """Response did not contain the requested number of well-formed blocks."""


class InvariantViolation(BenchmarkError):
    """Parsed content violates an item invariant (empty/identical fields)."""


class ImbalancedDataset(BenchmarkError):
    """Per-split True/False counts are not equal."""


class QuotaViolation(BenchmarkError):
    """A guideline does not carry exactly its per-guideline item quota."""


@dataclass
class AssertionPair:
    pair_id: str
    guideline_id: str
    true_statement: str
    false_statement: str
    perturbed_detail: PerturbedDetail


@dataclass
class AssertionItem:
    item_id: str
    pair_id: str
    guideline_id: str
    split: Split
    statement: str
    label: Label

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "pair_id": self.pair_id,
            "guideline_id": self.guideline_id,
            "split": self.split.value,
            "statement": self.statement,
            "label": self.label.value,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "AssertionItem":
        return cls(
            item_id=obj["item_id"],
            pair_id=obj["pair_id"],
            guideline_id=obj["guideline_id"],
            split=Split(obj["split"]),
            statement=obj["statement"],
            label=Label(obj["label"]),
        )


@dataclass
class QAItem:
    item_id: str
    guideline_id: str
    split: Split
    question: str
    reference_answer: str
    kind: QAKind

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "guideline_id": self.guideline_id,
            "split": self.split.value,
            "question": self.question,
            "reference_answer": self.reference_answer,
            "kind": self.kind.value,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "QAItem":
        return cls(
            item_id=obj["item_id"],
            guideline_id=obj["guideline_id"],
            split=Split(obj["split"]),
            question=obj["question"],
            reference_answer=obj["reference_answer"],
            kind=QAKind(obj["kind"]),
        )


@dataclass
class BenchmarkManifest:
    assertion_counts: dict[str, dict[str, int]]  # split -> {"true": n, "false": n}
    qa_counts: dict[str, int]  # split -> n
    n_guidelines: int
    source_model_id: str
    seed: int | None

    def to_dict(self) -> dict:
        return {
            "assertion_counts": self.assertion_counts,
            "qa_counts": self.qa_counts,
            "n_guidelines": self.n_guidelines,
            "source_model_id": self.source_model_id,
            "seed": self.seed,
        }


_ITEM_RE = re.compile(r"^ITEM\s+(\d+)\s*$", re.MULTILINE)


def _parse_blocks(text: str, fields: tuple[str, ...], expected: int) -> list[dict[str, str]]:
    """Split a response into ITEM blocks and extract labeled fields.

    A field value runs from after "LABEL:" to the start of the next label
    line or block header. Raises UnparseableGeneration unless exactly
    `expected` blocks each carry every field exactly once.
    """
    headers = list(_ITEM_RE.finditer(text))
    if len(headers) != expected:
        raise UnparseableGeneration(
            f"expected {expected} ITEM blocks, found {len(headers)}"
        )
    field_re = re.compile(
        r"^(" + "|".join(re.escape(f) for f in fields) + r"):[ \t]*", re.MULTILINE
    )
    blocks: list[dict[str, str]] = []
    for i, header in enumerate(headers):
        start = header.end()
        end = headers[i + 1].start() if i + 1 < len(headers) else len(text)
        body = text[start:end]
        marks = list(field_re.finditer(body))
        block: dict[str, str] = {}
        for j, m in enumerate(marks):
            value_end = marks[j + 1].start() if j + 1 < len(marks) else len(body)
            name = m.group(1)
            if name in block:
                raise UnparseableGeneration(f"duplicate field {name} in block {i + 1}")
            block[name] = body[m.end():value_end].strip()
        missing = [f for f in fields if f not in block]
        if missing:
            raise UnparseableGeneration(f"block {i + 1} is missing fields {missing}")
        blocks.append(block)
    return blocks


def assertion_request(
    g: TruncatedGuideline,
    n_pairs: int = DEFAULT_N_PAIRS,
    model_id: str = "",
    max_output_tokens: int = 2048,
    prompts_dir: str | Path | None = None,
) -> ChatRequest:
    """The exact request generate_assertion_pairs sends; public so mock
    scripts can be keyed to its fingerprint. Decoding is greedy."""
    template = load_template("assertion_pairs", prompts_dir)
    return ChatRequest(
        model_id=model_id,
        messages=[("user", template.format(n_pairs=n_pairs, guideline=g.text))],
        temperature=0.0,
        max_output_tokens=max_output_tokens,
    )


def qa_request(
    g: TruncatedGuideline,
    n: int = DEFAULT_N_QUESTIONS,
    model_id: str = "",
    max_output_tokens: int = 2048,
    prompts_dir: str | Path | None = None,
) -> ChatRequest:
    """The exact request generate_qa_items sends (greedy decoding)."""
    n_broad = n * 2 // 5  # 2 broad + 3 specific at the default quota of 5
    template = load_template("qa_items", prompts_dir)
    return ChatRequest(
        model_id=model_id,
        messages=[
            (
                "user",
                template.format(
                    n_items=n, n_broad=n_broad, n_specific=n - n_broad, guideline=g.text
                ),
            )
        ],
        temperature=0.0,
        max_output_tokens=max_output_tokens,
    )


def _complete_with_reprompt(request: ChatRequest, backend: Backend, parse):
    """Run request -> parse; on a strict-parse failure, re-request once."""
    last_error: BenchmarkError | None = None
    for _ in range(2):
        response = complete(request, backend)
        if response.finish_reason == "error":
            last_error = UnparseableGeneration(response.error or "backend error")
            continue
        try:
            return parse(response.content)
        except (UnparseableGeneration, InvariantViolation) as exc:
            last_error = exc
    assert last_error is not None
    raise last_error


def generate_assertion_pairs(
    g: TruncatedGuideline,
    backend: Backend,
    n_pairs: int = DEFAULT_N_PAIRS,
    model_id: str = "",
    max_output_tokens: int = 2048,
    prompts_dir: str | Path | None = None,
) -> list[AssertionPair]:
    """Generate exactly n_pairs true/false assertion pairs for a guideline,
    conditioned on its full truncated text."""
    request = assertion_request(g, n_pairs, model_id, max_output_tokens, prompts_dir)

    def parse(content: str) -> list[AssertionPair]:
        blocks = _parse_blocks(content, ("TRUE", "FALSE", "DETAIL"), n_pairs)
        pairs = []
        for k, block in enumerate(blocks, start=1):
            true_s, false_s = block["TRUE"], block["FALSE"]
            if not true_s or not false_s:
                raise InvariantViolation(f"empty statement in pair {k} of {g.id}")
            if true_s == false_s:
                raise InvariantViolation(f"identical statements in pair {k} of {g.id}")
            try:
                detail = PerturbedDetail(block["DETAIL"].lower())
            except ValueError:
                detail = PerturbedDetail.OTHER
            pairs.append(
                AssertionPair(
                    pair_id=f"{g.id}:p{k}",
                    guideline_id=g.id,
                    true_statement=true_s,
                    false_statement=false_s,
                    perturbed_detail=detail,
                )
            )
        return pairs

    return _complete_with_reprompt(request, backend, parse)


def generate_qa_items(
    g: TruncatedGuideline,
    backend: Backend,
    split: SplitAssignment,
    n: int = DEFAULT_N_QUESTIONS,
    model_id: str = "",
    max_output_tokens: int = 2048,
    prompts_dir: str | Path | None = None,
) -> list[QAItem]:
    """Generate exactly n open questions with reference answers for a
    guideline; kind (broad/specific) is assigned by the generator output."""
    request = qa_request(g, n, model_id, max_output_tokens, prompts_dir)
    item_split = split.split_of(g.id)

    def parse(content: str) -> list[QAItem]:
        blocks = _parse_blocks(content, ("KIND", "QUESTION", "ANSWER"), n)
        items = []
        for k, block in enumerate(blocks, start=1):
            try:
                kind = QAKind(block["KIND"].lower())
            except ValueError:
                raise UnparseableGeneration(
                    f"unknown kind {block['KIND']!r} in item {k} of {g.id}"
                ) from None
            if not block["QUESTION"]:
                raise InvariantViolation(f"empty question in item {k} of {g.id}")
            if not block["ANSWER"]:
                raise InvariantViolation(f"empty reference answer in item {k} of {g.id}")
            items.append(
                QAItem(
                    item_id=f"{g.id}:q{k}",
                    guideline_id=g.id,
                    split=item_split,
                    question=block["QUESTION"],
                    reference_answer=block["ANSWER"],
                    kind=kind,
                )
            )
        return items

    return _complete_with_reprompt(request, backend, parse)


def flatten_and_shuffle(
    pairs: list[AssertionPair], seed: int, split: SplitAssignment
) -> list[AssertionItem]:
    """Flatten pairs into individual labeled items and apply a seeded
    permutation. Label counts stay balanced by construction; pair members
    are not required to end up adjacent."""
    items: list[AssertionItem] = []
    for pair in pairs:
        item_split = split.split_of(pair.guideline_id)
        items.append(
            AssertionItem(
                item_id=f"{pair.pair_id}:t",
                pair_id=pair.pair_id,
                guideline_id=pair.guideline_id,
                split=item_split,
                statement=pair.true_statement,
                label=Label.TRUE,
            )
        )
        items.append(
            AssertionItem(
                item_id=f"{pair.pair_id}:f",
                pair_id=pair.pair_id,
                guideline_id=pair.guideline_id,
                split=item_split,
                statement=pair.false_statement,
                label=Label.FALSE,
            )
        )
    SplitMix64(seed).shuffle(items)
    return items


def validate_benchmark(
    assertion_items: list[AssertionItem],
    qa_items: list[QAItem],
    split: SplitAssignment,
    n_pairs: int = DEFAULT_N_PAIRS,
    n_questions: int = DEFAULT_N_QUESTIONS,
    source_model_id: str = "",
    seed: int | None = None,
) -> BenchmarkManifest:
    """Check balance, per-guideline quotas, and pairing; return the counts
    manifest. Checks run in that order, so a missing item surfaces as
    ImbalancedDataset before its quota breach."""
    if not assertion_items and not qa_items:
        raise BenchmarkError("validate_benchmark requires at least one item")

    for item in assertion_items:
        if split.split_of(item.guideline_id) is not item.split:
            raise InvariantViolation(
                f"item {item.item_id} is tagged {item.split.value} but its "
                f"guideline is in the {split.split_of(item.guideline_id).value} split"
            )
    for item in qa_items:
        if split.split_of(item.guideline_id) is not item.split:
            raise InvariantViolation(
                f"item {item.item_id} is tagged {item.split.value} but its "
                f"guideline is in the {split.split_of(item.guideline_id).value} split"
            )

    assertion_counts: dict[str, dict[str, int]] = {}
    for item in assertion_items:
        counts = assertion_counts.setdefault(item.split.value, {"true": 0, "false": 0})
        counts[item.label.value] += 1
    for split_name, counts in sorted(assertion_counts.items()):
        if counts["true"] != counts["false"]:
            raise ImbalancedDataset(
                f"{split_name} split has {counts['true']} true vs "
                f"{counts['false']} false assertions"
            )

    per_guideline_assertions: dict[str, int] = {gid: 0 for gid in split.by_id}
    for item in assertion_items:
        per_guideline_assertions[item.guideline_id] += 1
    if assertion_items:
        for gid, count in sorted(per_guideline_assertions.items()):
            if count != 2 * n_pairs:
                raise QuotaViolation(
                    f"guideline {gid!r} has {count} assertions, expected {2 * n_pairs}"
                )

    per_guideline_questions: dict[str, int] = {gid: 0 for gid in split.by_id}
    for item in qa_items:
        per_guideline_questions[item.guideline_id] += 1
    if qa_items:
        for gid, count in sorted(per_guideline_questions.items()):
            if count != n_questions:
                raise QuotaViolation(
                    f"guideline {gid!r} has {count} questions, expected {n_questions}"
                )

    by_pair: dict[str, set[Label]] = {}
    for item in assertion_items:
        by_pair.setdefault(item.pair_id, set()).add(item.label)
    pair_sizes: dict[str, int] = {}
    for item in assertion_items:
        pair_sizes[item.pair_id] = pair_sizes.get(item.pair_id, 0) + 1
    for pair_id in sorted(by_pair):
        if pair_sizes[pair_id] != 2 or by_pair[pair_id] != {Label.TRUE, Label.FALSE}:
            raise InvariantViolation(
                f"pair {pair_id!r} does not carry exactly one true and one false item"
            )

    qa_counts: dict[str, int] = {}
    for item in qa_items:
        qa_counts[item.split.value] = qa_counts.get(item.split.value, 0) + 1

    return BenchmarkManifest(
        assertion_counts={k: dict(v) for k, v in sorted(assertion_counts.items())},
        qa_counts=dict(sorted(qa_counts.items())),
        n_guidelines=len(split.by_id),
        source_model_id=source_model_id,
        seed=seed,
    )
