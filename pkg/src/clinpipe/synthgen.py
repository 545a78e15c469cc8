"""Synthetic training-data synthesis over the guideline corpus.

Three formats (rephrase, wiki-style article, question-answer pairs) are
generated per guideline by one or more generator models, sampling several
outputs per prompt. QA generation is restricted to train-split guidelines;
test-split guidelines feed only rephrase and wiki generation. The plan
layer enforces that rule and verify_no_leakage re-checks the produced
documents, so a leak has to get past two independent guards.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .corpus import Split, SplitAssignment, TruncatedGuideline
from .gateway import Backend, ChatRequest, ChatResponse, complete_batch
from .prompts import load_template
from .seeds import stable_hash64
from .tokens import TokenEstimator, estimate_tokens

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES_PER_PROMPT = 10


class Format(str, Enum):
    REPHRASE = "rephrase"
    WIKI = "wiki"
    QA = "qa"


# formats every guideline receives; QA is train-split only
ALL_SPLIT_FORMATS = (Format.REPHRASE, Format.WIKI)


class PlanError(Exception):
    """The generation plan cannot be built from the given inputs."""


@dataclass
class GeneratorSpec:
    name: str
    backend: Backend | None = None  # not needed for planning, only for execution
    temperature: float = 0.8
    max_output_tokens: int = 4096


@dataclass(frozen=True)
class GenerationTask:
    guideline_id: str
    generator_name: str
    format: Format
    sample_index: int

    @property
    def key(self) -> tuple[str, str, str, int]:
        return (self.guideline_id, self.generator_name, self.format.value, self.sample_index)

    @property
    def task_id(self) -> str:
        return f"{self.guideline_id}:{self.generator_name}:{self.format.value}:{self.sample_index}"


@dataclass
class SyntheticDoc:
    guideline_id: str
    generator: str
    format: Format
    sample_index: int
    text: str
    token_count: int

    @property
    def key(self) -> tuple[str, str, str, int]:
        return (self.guideline_id, self.generator, self.format.value, self.sample_index)

    def to_dict(self) -> dict:
        return {
            "guideline_id": self.guideline_id,
            "generator": self.generator,
            "format": self.format.value,
            "sample_index": self.sample_index,
            "text": self.text,
            "token_count": self.token_count,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SyntheticDoc":
        return cls(
            guideline_id=obj["guideline_id"],
            generator=obj["generator"],
            format=Format(obj["format"]),
            sample_index=int(obj["sample_index"]),
            text=obj["text"],
            token_count=int(obj["token_count"]),
        )


@dataclass
class GenerationFailure:
    task: GenerationTask
    reason: str

    def to_dict(self) -> dict:
        return {"task_id": self.task.task_id, "reason": self.reason}


@dataclass
class GenerationResult:
    docs: list[SyntheticDoc]
    failures: list[GenerationFailure]


@dataclass
class LeakageReport:
    violations: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"ok": self.ok, "violations": self.violations}


@dataclass
class GenerationSummary:
    n_docs: int
    total_tokens: int
    avg_tokens_per_doc: float
    by_generator: dict[str, dict]
    by_format: dict[str, dict]

    def to_dict(self) -> dict:
        return {
            "n_docs": self.n_docs,
            "total_tokens": self.total_tokens,
            "avg_tokens_per_doc": self.avg_tokens_per_doc,
            "by_generator": self.by_generator,
            "by_format": self.by_format,
        }


def build_plan(
    split: SplitAssignment,
    generators: list[GeneratorSpec],
    formats: set[Format] | list[Format] | None = None,
    samples_per_prompt: int = DEFAULT_SAMPLES_PER_PROMPT,
) -> list[GenerationTask]:
    """Enumerate every generation task for the corpus.

    Rephrase and wiki tasks cover every guideline; QA tasks cover only
    train-split guidelines. Tasks are ordered by
    (guideline_id, generator, format, sample_index).
    """
    if not generators:
        raise PlanError("at least one generator is required")
    formats = set(formats) if formats else set(Format)
    if not formats:
        raise PlanError("at least one format is required")
    if samples_per_prompt < 1:
        raise PlanError("samples_per_prompt must be >= 1")
    names = [g.name for g in generators]
    if len(set(names)) != len(names):
        raise PlanError("generator names must be unique within a run")

    tasks: list[GenerationTask] = []
    for gid in split.by_id:
        is_train = split.by_id[gid] is Split.TRAIN
        for fmt in formats:
            if fmt is Format.QA and not is_train:
                continue
            for name in names:
                for i in range(samples_per_prompt):
                    tasks.append(GenerationTask(gid, name, fmt, i))
    tasks.sort(key=lambda t: t.key)
    return tasks


def render_prompt(
    g: TruncatedGuideline,
    format: Format,
    model_id: str = "",
    temperature: float = 0.8,
    max_output_tokens: int = 4096,
    seed: int | None = None,
    prompts_dir: str | Path | None = None,
) -> ChatRequest:
    """Build the generation request for one guideline and format: the
    format-specific instruction with the full truncated text embedded."""
    if not g.text:
        raise ValueError(f"guideline {g.id!r} has empty text")
    template = load_template(format.value, prompts_dir)
    return ChatRequest(
        model_id=model_id,
        messages=[("user", template.format(guideline=g.text))],
        temperature=temperature,
        max_output_tokens=max_output_tokens,
        seed=seed,
    )


def task_seed(task: GenerationTask) -> int:
    """Per-sample decoding seed: stable hash of the task key, masked to 63
    bits so it fits backends that expect a signed integer."""
    return stable_hash64(task.task_id) & (2**63 - 1)


def _build_request(
    task: GenerationTask,
    guideline: TruncatedGuideline,
    spec: GeneratorSpec,
    prompts_dir: str | Path | None,
) -> ChatRequest:
    return render_prompt(
        guideline,
        task.format,
        model_id=spec.name,
        temperature=spec.temperature,
        max_output_tokens=spec.max_output_tokens,
        seed=task_seed(task),
        prompts_dir=prompts_dir,
    )


def generate(
    plan: list[GenerationTask],
    guidelines_by_id: dict[str, TruncatedGuideline],
    generators: list[GeneratorSpec],
    token_estimator: TokenEstimator = estimate_tokens,
    prompts_dir: str | Path | None = None,
) -> GenerationResult:
    """Execute a generation plan: one document per task.

    Failed tasks (error responses or empty text) are retried once with the
    identical request, then recorded in the failure report; they are never
    silently dropped. Output docs are sorted by task key so the persisted
    artifact is order-deterministic regardless of completion order.
    """
    specs = {g.name: g for g in generators}
    missing = sorted({t.generator_name for t in plan} - set(specs))
    if missing:
        raise PlanError(f"plan references unknown generators: {missing}")
    for name in sorted({t.generator_name for t in plan}):
        if specs[name].backend is None:
            raise PlanError(f"generator {name!r} has no backend configured")

    docs: list[SyntheticDoc] = []
    failures: list[GenerationFailure] = []
    by_generator: dict[str, list[GenerationTask]] = {}
    for task in plan:
        by_generator.setdefault(task.generator_name, []).append(task)

    for name in sorted(by_generator):
        spec = specs[name]
        tasks = by_generator[name]
        requests = [
            _build_request(t, _guideline_for(t, guidelines_by_id), spec, prompts_dir)
            for t in tasks
        ]
        responses = complete_batch(requests, spec.backend)
        retry_idx = [i for i, r in enumerate(responses) if _failed(r)]
        if retry_idx:
            logger.info("retrying %d failed tasks for generator %s", len(retry_idx), name)
            retries = complete_batch([requests[i] for i in retry_idx], spec.backend)
            for i, resp in zip(retry_idx, retries):
                responses[i] = resp
        for task, resp in zip(tasks, responses):
            if _failed(resp):
                failures.append(GenerationFailure(task, resp.error or "empty generation"))
                continue
            docs.append(
                SyntheticDoc(
                    guideline_id=task.guideline_id,
                    generator=task.generator_name,
                    format=task.format,
                    sample_index=task.sample_index,
                    text=resp.content,
                    token_count=token_estimator(resp.content),
                )
            )

    docs.sort(key=lambda d: d.key)
    failures.sort(key=lambda f: f.task.key)
    return GenerationResult(docs=docs, failures=failures)


def _guideline_for(
    task: GenerationTask, guidelines_by_id: dict[str, TruncatedGuideline]
) -> TruncatedGuideline:
    try:
        return guidelines_by_id[task.guideline_id]
    except KeyError:
        raise PlanError(f"plan references unknown guideline: {task.guideline_id!r}") from None


def _failed(resp: ChatResponse) -> bool:
    return resp.finish_reason == "error" or not resp.content.strip()


def verify_no_leakage(docs: list[SyntheticDoc], split: SplitAssignment) -> LeakageReport:
    """List every QA document whose guideline sits in the test split.

    The pipeline must treat a non-empty violation list as fatal. Rephrase
    and wiki docs on test guidelines are legitimate and not reported.
    """
    violations = []
    for doc in docs:
        doc_split = split.split_of(doc.guideline_id)  # raises on unknown id
        if doc.format is Format.QA and doc_split is Split.TEST:
            violations.append(
                {
                    "guideline_id": doc.guideline_id,
                    "generator": doc.generator,
                    "format": doc.format.value,
                    "sample_index": doc.sample_index,
                }
            )
    return LeakageReport(violations=violations)


def summarize_generation(docs: list[SyntheticDoc]) -> GenerationSummary:
    """Exact per-generator and per-format accounting of the produced corpus."""
    if not docs:
        raise ValueError("summarize_generation requires at least one document")

    def bucket(keys: list[str]) -> dict[str, dict]:
        out: dict[str, dict] = {}
        for key, doc in zip(keys, docs):
            entry = out.setdefault(key, {"docs": 0, "tokens": 0})
            entry["docs"] += 1
            entry["tokens"] += doc.token_count
        for entry in out.values():
            entry["avg_tokens"] = entry["tokens"] / entry["docs"]
        return dict(sorted(out.items()))

    total_tokens = sum(d.token_count for d in docs)
    return GenerationSummary(
        n_docs=len(docs),
        total_tokens=total_tokens,
        avg_tokens_per_doc=total_tokens / len(docs),
        by_generator=bucket([d.generator for d in docs]),
        by_format=bucket([d.format.value for d in docs]),
    )
