"""Trainer-ready artifacts: packed sequences, SFT pairs, replay mixes,
rollout rewards with group-relative advantages, and hyperparameter export.

The weight updates themselves (causal LM pre-training, LoRA fine-tuning,
the clipped-surrogate policy step) happen in an external trainer; this
module produces exactly what that trainer consumes. The reward is
verifiable by construction: verdict correctness plus a reasoning-length
gate, so no learned reward model is involved.

Word counting for the reasoning gate: whitespace-separated tokens of the
completion minus the single matched verdict token. Advantages use the
population standard deviation with a 1e-8 numerical epsilon; groups with
identical rewards get exactly zero advantages.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable

from .benchmarks import AssertionItem, Label
from .corpus import Split, SplitAssignment, TruncatedGuideline
from .evaluation import Verdict, extract_verdict
from .gateway import Backend, ChatRequest, complete_batch
from .prompts import load_template
from .seeds import SplitMix64, derive_seed
from .synthgen import SyntheticDoc

logger = logging.getLogger(__name__)

MAX_CPT_TOKENS = 4096
DEFAULT_GROUP_SIZE = 16
DEFAULT_MAX_COMPLETION_TOKENS = 512
ADVANTAGE_EPS = 1e-8

Tokenizer = Callable[[str], list[int]]


class TrainPrepError(Exception):
    """Training-data preparation failed."""


class LeakageViolation(TrainPrepError):
    """A test-split item reached a train-only builder."""


class InsufficientReplayPool(TrainPrepError):
    """The replay pool cannot supply the requested fraction."""


class Stage(str, Enum):
    CPT = "cpt"
    SFT = "sft"
    GRPO = "grpo"


@dataclass
class PackedSequence:
    token_ids: list[int]
    loss_mask: list[bool]

    def to_dict(self) -> dict:
        return {"token_ids": self.token_ids, "loss_mask": self.loss_mask}


@dataclass
class SftExample:
    messages: tuple[str, str]  # (user prompt, assistant answer)
    token_ids: list[int]
    loss_mask: list[bool]

    def to_dict(self) -> dict:
        return {
            "messages": [
                {"role": "user", "content": self.messages[0]},
                {"role": "assistant", "content": self.messages[1]},
            ],
            "token_ids": self.token_ids,
            "loss_mask": self.loss_mask,
        }


@dataclass
class RewardSpec:
    min_reasoning_words: int = 50
    correct_reward: float = 1.0
    incorrect_reward: float = 0.0

    def __post_init__(self):
        if self.min_reasoning_words < 0:
            raise ValueError("min_reasoning_words must be >= 0")


@dataclass
class RolloutGroup:
    prompt_id: str
    gold_label: Label
    completions: list[str]
    rewards: list[float]
    advantages: list[float]
    errored: list[bool] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "prompt_id": self.prompt_id,
            "gold_label": self.gold_label.value,
            "completions": self.completions,
            "rewards": self.rewards,
            "advantages": self.advantages,
            "errored": self.errored,
        }


def pack_cpt_dataset(
    docs: list[SyntheticDoc],
    tokenizer: Tokenizer,
    max_len: int = MAX_CPT_TOKENS,
) -> list[PackedSequence]:
    """One sequence per document, truncated at max_len, every token
    contributing to the loss. Output order is the doc key order."""
    sequences = []
    for doc in sorted(docs, key=lambda d: d.key):
        token_ids = tokenizer(doc.text)[:max_len]
        if not token_ids:
            raise TrainPrepError(
                f"document {doc.guideline_id}:{doc.generator}:{doc.format.value}:"
                f"{doc.sample_index} tokenized to zero tokens"
            )
        sequences.append(PackedSequence(token_ids=token_ids, loss_mask=[True] * len(token_ids)))
    return sequences


def pack_texts(
    texts: list[str], tokenizer: Tokenizer, max_len: int = MAX_CPT_TOKENS
) -> list[PackedSequence]:
    """Pack arbitrary texts (e.g. a replay-mixed corpus) in input order."""
    sequences = []
    for i, text in enumerate(texts):
        token_ids = tokenizer(text)[:max_len]
        if not token_ids:
            raise TrainPrepError(f"text at position {i} tokenized to zero tokens")
        sequences.append(PackedSequence(token_ids=token_ids, loss_mask=[True] * len(token_ids)))
    return sequences


def _guard_train_only(items: list[AssertionItem], split: SplitAssignment, builder: str) -> None:
    for item in items:
        if split.split_of(item.guideline_id) is not Split.TRAIN:
            raise LeakageViolation(
                f"{builder} received test-split item {item.item_id!r} "
                f"(guideline {item.guideline_id!r})"
            )


def build_sft_dataset(
    items: list[AssertionItem],
    guidelines_by_id: dict[str, TruncatedGuideline],
    teacher_backend: Backend,
    split: SplitAssignment,
    tokenizer: Tokenizer,
    model_id: str = "",
    max_output_tokens: int = 1024,
    prompts_dir: str | Path | None = None,
) -> list[SftExample]:
    """Build prompt-answer pairs for supervised fine-tuning.

    The teacher sees the source guideline in context and produces a
    reasoned verdict answer; the stored user prompt is the plain
    statement-verification prompt the student will see. Loss masks are
    true exactly over the assistant answer tokens, at the sequence tail.
    Any test-split item is a LeakageViolation; the guard checks the
    authoritative split assignment, not the item's own split tag.
    """
    _guard_train_only(items, split, "build_sft_dataset")
    teacher_template = load_template("sft_teacher", prompts_dir)
    student_template = load_template("eval_tf", prompts_dir)

    requests = []
    for item in items:
        try:
            guideline = guidelines_by_id[item.guideline_id]
        except KeyError:
            raise TrainPrepError(f"no guideline text for {item.guideline_id!r}") from None
        requests.append(
            ChatRequest(
                model_id=model_id,
                messages=[
                    (
                        "user",
                        teacher_template.format(guideline=guideline.text, statement=item.statement),
                    )
                ],
                temperature=0.0,
                max_output_tokens=max_output_tokens,
            )
        )
    responses = complete_batch(requests, teacher_backend)

    examples = []
    for item, response in zip(items, responses):
        if response.finish_reason == "error" or not response.content.strip():
            raise TrainPrepError(
                f"teacher generation failed for item {item.item_id!r}: "
                f"{response.error or 'empty response'}"
            )
        user_prompt = student_template.format(statement=item.statement)
        answer = response.content
        prompt_ids = tokenizer(user_prompt)
        answer_ids = tokenizer(answer)
        if not prompt_ids or not answer_ids:
            raise TrainPrepError(f"empty tokenization for item {item.item_id!r}")
        examples.append(
            SftExample(
                messages=(user_prompt, answer),
                token_ids=prompt_ids + answer_ids,
                loss_mask=[False] * len(prompt_ids) + [True] * len(answer_ids),
            )
        )
    return examples


def mix_replay(
    domain_docs: list,
    replay_docs: list,
    replay_fraction: float = 0.5,
    seed: int = 0,
) -> list:
    """Mix replay documents into the domain corpus.

    Keeps every domain doc and samples floor(f * n_domain / (1 - f)) replay
    docs without replacement, so the replay share of the output is the
    requested fraction under the documented floor rule; a 0.5 fraction is
    the 1:1 mix. The combined list is then shuffled with the given seed.
    """
    if not 0.0 <= replay_fraction < 1.0:
        raise ValueError("replay_fraction must be in [0, 1)")
    n_domain = len(domain_docs)
    n_replay = int(replay_fraction * n_domain / (1.0 - replay_fraction))
    if n_replay > len(replay_docs):
        raise InsufficientReplayPool(
            f"need {n_replay} replay docs for fraction {replay_fraction} "
            f"over {n_domain} domain docs, pool has {len(replay_docs)}"
        )
    rng = SplitMix64(seed)
    indices = list(range(len(replay_docs)))
    rng.shuffle(indices)
    sampled = [replay_docs[i] for i in sorted(indices[:n_replay])]
    mixed = list(domain_docs) + sampled
    rng.shuffle(mixed)
    return mixed


def compute_reward(
    completion: str, gold_label: Label, spec: RewardSpec | None = None
) -> float:
    """Binary verifiable reward: full reward iff the extracted verdict
    matches the gold label AND the completion carries at least
    min_reasoning_words besides the matched verdict token. Bare-label
    answers therefore earn nothing."""
    spec = spec or RewardSpec()
    verdict = extract_verdict(completion)
    if verdict is Verdict.ABSTAIN or verdict.value != gold_label.value:
        return spec.incorrect_reward
    words = len(completion.split())
    reasoning_words = words - 1  # exclude the single matched verdict token
    if reasoning_words < spec.min_reasoning_words:
        return spec.incorrect_reward
    return spec.correct_reward


def compute_group_advantages(rewards: list[float]) -> list[float]:
    """Group-relative advantages: (r - mean) / (population std + 1e-8).
    A zero-variance group yields exactly zero advantages."""
    g = len(rewards)
    if g < 2:
        raise ValueError("advantage normalization requires a group of at least 2")
    if max(rewards) == min(rewards):
        return [0.0] * g
    mean = sum(rewards) / g
    variance = sum((r - mean) ** 2 for r in rewards) / g
    std = variance**0.5
    return [(r - mean) / (std + ADVANTAGE_EPS) for r in rewards]


def build_rollout_groups(
    items: list[AssertionItem],
    policy_backend: Backend,
    split: SplitAssignment,
    group_size: int = DEFAULT_GROUP_SIZE,
    max_tokens: int = DEFAULT_MAX_COMPLETION_TOKENS,
    model_id: str = "",
    temperature: float = 1.0,
    reward_spec: RewardSpec | None = None,
    seed: int = 0,
    prompts_dir: str | Path | None = None,
) -> list[RolloutGroup]:
    """Sample a completion group per train-split assertion and attach
    binary rewards and normalized advantages. Gateway errors become
    empty completions with reward 0.0, marked errored."""
    reward_spec = reward_spec or RewardSpec()
    if group_size < 2:
        raise ValueError("group_size must be >= 2")
    _guard_train_only(items, split, "build_rollout_groups")
    template = load_template("eval_tf", prompts_dir)

    requests = []
    for item in items:
        prompt = template.format(statement=item.statement)
        for j in range(group_size):
            requests.append(
                ChatRequest(
                    model_id=model_id,
                    messages=[("user", prompt)],
                    temperature=temperature,
                    max_output_tokens=max_tokens,
                    seed=derive_seed(seed, f"{item.item_id}:{j}") & (2**63 - 1),
                )
            )
    responses = complete_batch(requests, policy_backend)

    groups = []
    for i, item in enumerate(items):
        batch = responses[i * group_size : (i + 1) * group_size]
        completions = [r.content if r.finish_reason != "error" else "" for r in batch]
        errored = [r.finish_reason == "error" for r in batch]
        rewards = [compute_reward(c, item.label, reward_spec) for c in completions]
        groups.append(
            RolloutGroup(
                prompt_id=item.item_id,
                gold_label=item.label,
                completions=completions,
                rewards=rewards,
                advantages=compute_group_advantages(rewards),
                errored=errored,
            )
        )
    return groups


_STAGE_CONFIGS: dict[Stage, dict] = {
    Stage.CPT: {
        "stage": "cpt",
        "objective": "causal_lm",
        "epochs": 3,
        "lr_schedule": "cosine",
        "peak_learning_rate": 5e-5,
        "min_learning_rate_ratio": 0.1,
        "optimizer": "adamw",
        "adam_beta1": 0.9,
        "adam_beta2": 0.95,
        "effective_batch_size": 32,
        "warmup_ratio": 1 / 3,
        "max_sequence_length": 4096,
        "loss_masking": "all_tokens",
    },
    Stage.SFT: {
        "stage": "sft",
        "optimizer": "adamw",
        "learning_rate": 3e-5,
        "effective_batch_size": 64,
        "loss_masking": "assistant_tokens_only",
    },
    Stage.GRPO: {
        "stage": "grpo",
        "lora_rank": 32,
        "lora_alpha": 64,
        "lora_target": "all_linear_layers",
        "epochs": 5,
        "group_size": 16,
        "max_completion_tokens": 512,
        "effective_batch_size": 128,
        "kl_beta": 0.0,
        "clip_epsilon": 0.2,
        "clip_epsilon_high": 0.28,
    },
}


def export_training_config(stage: Stage | str) -> dict:
    """The hyperparameter set consumed by the external trainer for one stage."""
    stage = Stage(stage)
    return dict(_STAGE_CONFIGS[stage])
