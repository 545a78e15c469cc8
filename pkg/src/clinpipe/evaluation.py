"""Benchmark evaluation: verdict extraction, judging, and score reports.

Verdict extraction is a total function over model text: a case- and
diacritic-insensitive scan for the stems "verdadeir" and "fals", where the
LAST occurrence decides (models reason first and conclude last) and
neither stem present means abstention. Judge verdicts use the analogous
rule over CORRECT/INCORRECT tokens and their Portuguese equivalents.

Answer latency is measured and kept on the in-memory records for
inspection but is not persisted to answer files, which must be
byte-identical across reruns.
"""

from __future__ import annotations

import logging
import time
import unicodedata
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .benchmarks import AssertionItem, Label, QAItem
from .gateway import (
    Backend,
    BackendConfig,
    ChatRequest,
    GatewayError,
    complete,
)
from .prompts import load_template

logger = logging.getLogger(__name__)


class Verdict(str, Enum):
    TRUE = "true"
    FALSE = "false"
    ABSTAIN = "abstain"


class JudgeOutcome(str, Enum):
    CORRECT = "correct"
    INCORRECT = "incorrect"
    UNPARSEABLE = "unparseable"


class AbstentionPolicy(str, Enum):
    EXCLUDE_FROM_DENOMINATOR = "exclude_from_denominator"
    COUNT_AS_INCORRECT = "count_as_incorrect"


@dataclass
class ModelAnswer:
    item_id: str
    raw_text: str
    verdict: Verdict
    latency: float = 0.0  # informational; not persisted
    error: str | None = None

    def to_dict(self) -> dict:
        rec = {
            "item_id": self.item_id,
            "raw_text": self.raw_text,
            "verdict": self.verdict.value,
        }
        if self.error is not None:
            rec["error"] = self.error
        return rec

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelAnswer":
        return cls(
            item_id=obj["item_id"],
            raw_text=obj["raw_text"],
            verdict=Verdict(obj["verdict"]),
            error=obj.get("error"),
        )


@dataclass
class JudgeVerdict:
    item_id: str
    verdict: JudgeOutcome
    judge_raw: str

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "verdict": self.verdict.value,
            "judge_raw": self.judge_raw,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "JudgeVerdict":
        return cls(
            item_id=obj["item_id"],
            verdict=JudgeOutcome(obj["verdict"]),
            judge_raw=obj["judge_raw"],
        )


def _fold(text: str) -> str:
    """Casefold and strip combining marks, so 'Verdadeiro', 'VERDADEIRA'
    and accented variants all expose the same stems."""
    decomposed = unicodedata.normalize("NFD", text)
    stripped = "".join(ch for ch in decomposed if not unicodedata.combining(ch))
    return stripped.casefold()


def extract_verdict(text: str) -> Verdict:
    """Scan for the stems "verdadeir" and "fals"; the last occurrence in
    the text decides. Neither stem present means Abstain. Total and
    deterministic."""
    folded = _fold(text)
    t_pos = folded.rfind("verdadeir")
    f_pos = folded.rfind("fals")
    if t_pos < 0 and f_pos < 0:
        return Verdict.ABSTAIN
    if t_pos >= 0 and f_pos >= 0:
        logger.debug("both verdict stems present (t=%d, f=%d): %r", t_pos, f_pos, text[:120])
    return Verdict.TRUE if t_pos > f_pos else Verdict.FALSE


_JUDGE_TOKEN_RE = re.compile(
    r"\b(incorrect|incorreto|incorreta|correct|correto|correta)\b"
)


def _parse_judge(text: str) -> JudgeOutcome:
    matches = list(_JUDGE_TOKEN_RE.finditer(_fold(text)))
    if not matches:
        return JudgeOutcome.UNPARSEABLE
    last = matches[-1].group(1)
    return JudgeOutcome.INCORRECT if last.startswith("in") else JudgeOutcome.CORRECT


def _timed_complete(request: ChatRequest, backend: Backend):
    start = time.perf_counter()
    try:
        response = complete(request, backend)
        error = response.error if response.finish_reason == "error" else None
        content = response.content
    except GatewayError as exc:
        content, error = "", str(exc)
    return content, error, time.perf_counter() - start


def _run_requests(requests: list[ChatRequest], backend: Backend):
    """Issue requests with bounded concurrency; results in request order."""
    max_in_flight = backend.max_in_flight if isinstance(backend, BackendConfig) else 8
    results = [None] * len(requests)
    with ThreadPoolExecutor(max_workers=min(max_in_flight, max(1, len(requests)))) as pool:
        futures = {
            pool.submit(_timed_complete, req, backend): i for i, req in enumerate(requests)
        }
        for fut, i in futures.items():
            results[i] = fut.result()
    return results


def run_assertion_eval(
    items: list[AssertionItem],
    model_backend: Backend,
    prompt_template: str,
    model_id: str = "",
    temperature: float = 0.0,
    max_output_tokens: int = 1024,
) -> list[ModelAnswer]:
    """Evaluate a model over assertion items; one answer per item, in item
    order. Decoding is forced greedy: a non-zero configured temperature is
    overridden to 0 with a warning. Gateway errors become abstentions with
    the error recorded."""
    if "{statement}" not in prompt_template:
        raise ValueError("prompt_template must contain a {statement} placeholder")
    if temperature != 0.0:
        logger.warning("overriding configured temperature %s to 0 (greedy)", temperature)
    requests = [
        ChatRequest(
            model_id=model_id,
            messages=[("user", prompt_template.format(statement=item.statement))],
            temperature=0.0,
            max_output_tokens=max_output_tokens,
        )
        for item in items
    ]
    answers = []
    for item, (content, error, latency) in zip(items, _run_requests(requests, model_backend)):
        verdict = Verdict.ABSTAIN if error is not None else extract_verdict(content)
        answers.append(
            ModelAnswer(
                item_id=item.item_id,
                raw_text=content,
                verdict=verdict,
                latency=latency,
                error=error,
            )
        )
    return answers


def run_qa_eval(
    items: list[QAItem],
    model_backend: Backend,
    prompt_template: str,
    model_id: str = "",
    max_output_tokens: int = 1024,
) -> list[ModelAnswer]:
    """Generate free-text answers for open questions (greedy decoding).
    The verdict field is still derived from the raw text but is not used
    by QA scoring, which goes through the judge."""
    if "{question}" not in prompt_template:
        raise ValueError("prompt_template must contain a {question} placeholder")
    requests = [
        ChatRequest(
            model_id=model_id,
            messages=[("user", prompt_template.format(question=item.question))],
            temperature=0.0,
            max_output_tokens=max_output_tokens,
        )
        for item in items
    ]
    answers = []
    for item, (content, error, latency) in zip(items, _run_requests(requests, model_backend)):
        verdict = Verdict.ABSTAIN if error is not None else extract_verdict(content)
        answers.append(
            ModelAnswer(
                item_id=item.item_id,
                raw_text=content,
                verdict=verdict,
                latency=latency,
                error=error,
            )
        )
    return answers


def judge_request(
    item: QAItem,
    answer_text: str,
    model_id: str = "",
    max_output_tokens: int = 512,
    prompts_dir: str | Path | None = None,
) -> ChatRequest:
    """The exact request judge_open_answer sends (greedy decoding)."""
    template = load_template("judge", prompts_dir)
    return ChatRequest(
        model_id=model_id,
        messages=[
            (
                "user",
                template.format(
                    question=item.question,
                    reference=item.reference_answer,
                    candidate=answer_text,
                ),
            )
        ],
        temperature=0.0,
        max_output_tokens=max_output_tokens,
    )


def judge_open_answer(
    item: QAItem,
    answer_text: str,
    judge_backend: Backend,
    model_id: str = "",
    max_output_tokens: int = 512,
    prompts_dir: str | Path | None = None,
) -> JudgeVerdict:
    """Compare a candidate answer against the reference via the judge
    backend. Empty candidates are Incorrect without invoking the judge;
    gateway errors are Unparseable."""
    if not answer_text.strip():
        return JudgeVerdict(item.item_id, JudgeOutcome.INCORRECT, "")
    request = judge_request(item, answer_text, model_id, max_output_tokens, prompts_dir)
    try:
        response = complete(request, judge_backend)
    except GatewayError as exc:
        return JudgeVerdict(item.item_id, JudgeOutcome.UNPARSEABLE, str(exc))
    if response.finish_reason == "error":
        return JudgeVerdict(item.item_id, JudgeOutcome.UNPARSEABLE, response.error or "")
    return JudgeVerdict(item.item_id, _parse_judge(response.content), response.content)


def judge_open_answers(
    items: list[QAItem],
    answers: list[ModelAnswer],
    judge_backend: Backend,
    model_id: str = "",
    max_output_tokens: int = 512,
    prompts_dir: str | Path | None = None,
) -> list[JudgeVerdict]:
    """Judge a full answer set, in item order."""
    by_id = {a.item_id: a for a in answers}
    verdicts = []
    for item in items:
        answer = by_id.get(item.item_id)
        text = answer.raw_text if answer is not None else ""
        verdicts.append(
            judge_open_answer(
                item, text, judge_backend, model_id, max_output_tokens, prompts_dir
            )
        )
    return verdicts


@dataclass
class SplitScores:
    n_items: int
    n_answered: int
    n_correct: int
    n_abstained: int
    accuracy: float
    accuracy_excluding_abstentions: float
    accuracy_counting_abstentions_incorrect: float
    abstention_rate: float
    predicted_true_rate: float | None

    def to_dict(self) -> dict:
        return {
            "n_items": self.n_items,
            "n_answered": self.n_answered,
            "n_correct": self.n_correct,
            "n_abstained": self.n_abstained,
            "accuracy": self.accuracy,
            "accuracy_excluding_abstentions": self.accuracy_excluding_abstentions,
            "accuracy_counting_abstentions_incorrect": self.accuracy_counting_abstentions_incorrect,
            "abstention_rate": self.abstention_rate,
            "predicted_true_rate": self.predicted_true_rate,
        }


@dataclass
class EvalReport:
    policy: AbstentionPolicy
    by_split: dict[str, SplitScores]
    overall: SplitScores

    def to_dict(self) -> dict:
        return {
            "policy": self.policy.value,
            "by_split": {k: v.to_dict() for k, v in sorted(self.by_split.items())},
            "overall": self.overall.to_dict(),
        }


def _tally(outcomes: list[tuple[bool, bool, bool]], policy: AbstentionPolicy) -> SplitScores:
    """outcomes is one (answered, correct, called_true) triple per item."""
    n_items = len(outcomes)
    n_answered = sum(1 for a, _, _ in outcomes if a)
    n_correct = sum(1 for a, c, _ in outcomes if a and c)
    n_abstained = n_items - n_answered
    acc_excl = n_correct / n_answered if n_answered else 0.0
    acc_incl = n_correct / n_items if n_items else 0.0
    accuracy = acc_excl if policy is AbstentionPolicy.EXCLUDE_FROM_DENOMINATOR else acc_incl
    n_true = sum(1 for a, _, t in outcomes if a and t)
    return SplitScores(
        n_items=n_items,
        n_answered=n_answered,
        n_correct=n_correct,
        n_abstained=n_abstained,
        accuracy=accuracy,
        accuracy_excluding_abstentions=acc_excl,
        accuracy_counting_abstentions_incorrect=acc_incl,
        abstention_rate=n_abstained / n_items if n_items else 0.0,
        predicted_true_rate=n_true / n_answered if n_answered else None,
    )


def score_report(
    records: list[ModelAnswer] | list[JudgeVerdict],
    items: list[AssertionItem] | list[QAItem],
    policy: AbstentionPolicy = AbstentionPolicy.EXCLUDE_FROM_DENOMINATOR,
) -> EvalReport:
    """Compute accuracy, abstention rate, and the predicted-true rate per
    split and overall.

    Accuracy under the selected policy lands in `accuracy`; both policy
    variants are always reported side by side. predicted_true_rate (the
    share of answered assertion items called True; 0.5 is ideal on a
    balanced set) is reported for assertion records and None for judged QA
    records. Items without a record count as abstentions.
    """
    items_by_id = {item.item_id: item for item in items}
    for rec in records:
        if rec.item_id not in items_by_id:
            raise KeyError(f"unknown item_id in records: {rec.item_id!r}")
    records_by_id = {rec.item_id: rec for rec in records}

    is_assertion = bool(items) and isinstance(items[0], AssertionItem)
    split_outcomes: dict[str, list[tuple[bool, bool, bool]]] = {}
    all_outcomes: list[tuple[bool, bool, bool]] = []
    for item in items:
        rec = records_by_id.get(item.item_id)
        if rec is None:
            outcome = (False, False, False)
        elif isinstance(rec, ModelAnswer):
            answered = rec.verdict is not Verdict.ABSTAIN
            correct = answered and rec.verdict.value == item.label.value
            outcome = (answered, correct, rec.verdict is Verdict.TRUE)
        else:
            answered = rec.verdict is not JudgeOutcome.UNPARSEABLE
            correct = rec.verdict is JudgeOutcome.CORRECT
            outcome = (answered, correct, False)
        split_outcomes.setdefault(item.split.value, []).append(outcome)
        all_outcomes.append(outcome)

    by_split = {name: _tally(outs, policy) for name, outs in split_outcomes.items()}
    overall = _tally(all_outcomes, policy)
    if not is_assertion:
        for scores in list(by_split.values()) + [overall]:
            scores.predicted_true_rate = None
    return EvalReport(policy=policy, by_split=by_split, overall=overall)
