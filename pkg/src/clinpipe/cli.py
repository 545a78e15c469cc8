"""clinpipe: single entry point exposing every pipeline stage as a subcommand.

Stages communicate through conventionally named files under the output
directory (guidelines.jsonl, split.json, plan.jsonl, synthetic.jsonl,
healthbench_br.jsonl, pcdt_qa.jsonl, ...), all JSONL/JSON and all
byte-deterministic for fixed inputs and seed. Every source of randomness
derives from the root seed via derive_seed(seed, stage_name), so re-running
one stage never perturbs its siblings.

Exit codes: 0 success, 1 usage, 2 configuration, 3 stage failure. Failures
emit a machine-readable JSON record on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .benchmarks import (
    AssertionItem,
    BenchmarkError,
    QAItem,
    flatten_and_shuffle,
    generate_assertion_pairs,
    generate_qa_items,
    validate_benchmark,
)
from .config import ConfigError, PipelineConfig, load_config
from .corpus import (
    CorpusError,
    Split,
    SplitAssignment,
    TruncatedGuideline,
    assign_splits,
    corpus_stats,
    ingest_corpus,
    truncate_guideline,
)
from .evaluation import (
    AbstentionPolicy,
    JudgeVerdict,
    ModelAnswer,
    Verdict,
    extract_verdict,
    judge_open_answers,
    run_assertion_eval,
    run_qa_eval,
    score_report,
)
from .gateway import ChatRequest, GatewayError, complete_batch
from .jsonlio import read_json, read_jsonl, write_json, write_jsonl
from .prompts import load_template
from .retrieval import (
    Chunk,
    assemble_rag_prompt,
    build_bm25,
    build_dense,
    chunk_corpus,
    load_bm25,
    load_dense,
    query_bm25,
    query_dense,
    save_bm25,
    save_dense,
)
from .seeds import derive_seed
from .synthgen import (
    Format,
    GenerationTask,
    GeneratorSpec,
    PlanError,
    SyntheticDoc,
    build_plan,
    generate,
    summarize_generation,
    verify_no_leakage,
)
from .tokens import WhitespaceTokenizer
from .trainprep import (
    LeakageViolation,
    RewardSpec,
    Stage,
    TrainPrepError,
    build_rollout_groups,
    build_sft_dataset,
    export_training_config,
    mix_replay,
    pack_cpt_dataset,
    pack_texts,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_STAGE = 3


class StageError(Exception):
    """Raised by commands for stage-level failures with a clean message."""


# --- shared file plumbing --------------------------------------------------


def _out(cfg: PipelineConfig, flag_value: str | None, default_name: str) -> Path:
    if flag_value:
        return Path(flag_value)
    return cfg.output_dir / default_name


def _in(cfg: PipelineConfig, flag_value: str | None, default_name: str) -> Path:
    path = Path(flag_value) if flag_value else cfg.output_dir / default_name
    if not path.is_file():
        raise StageError(f"required input not found: {path} (run the producing stage first)")
    return path


def _load_guideline_rows(cfg: PipelineConfig) -> list[dict]:
    return list(read_jsonl(_in(cfg, None, "guidelines.jsonl")))


def _truncated_guidelines(rows: list[dict]) -> list[TruncatedGuideline]:
    return [
        TruncatedGuideline(id=r["id"], text=r["text"], was_truncated=bool(r["was_truncated"]))
        for r in rows
    ]


def _load_split(cfg: PipelineConfig) -> SplitAssignment:
    return SplitAssignment.from_dict(read_json(_in(cfg, None, "split.json")))


def _load_assertion_items(path: Path) -> list[AssertionItem]:
    return [AssertionItem.from_dict(r) for r in read_jsonl(path)]


def _load_qa_items(path: Path) -> list[QAItem]:
    return [QAItem.from_dict(r) for r in read_jsonl(path)]


def _tokenizer(cfg: PipelineConfig) -> WhitespaceTokenizer:
    vocab = cfg.section("tokenizer").get("vocab")
    if vocab:
        return WhitespaceTokenizer.from_vocab_file(cfg.resolve_path(vocab))
    return WhitespaceTokenizer()


def _policy(cfg: PipelineConfig) -> AbstentionPolicy:
    try:
        return AbstentionPolicy(cfg.raw["abstention_policy"])
    except ValueError:
        raise ConfigError(
            f"unknown abstention_policy {cfg.raw['abstention_policy']!r}"
        ) from None


# --- commands ---------------------------------------------------------------


def cmd_ingest(args, cfg: PipelineConfig) -> int:
    guidelines = ingest_corpus(cfg.path("corpus_dir"), cfg.path("manifest"))
    limit = int(cfg.raw["truncation_limit"])
    truncated = [truncate_guideline(g, limit) for g in guidelines]
    stats = corpus_stats(guidelines, truncated)
    rows = [
        {
            "id": g.id,
            "title": g.title,
            "category": g.category.value,
            "split": None,
            "was_truncated": t.was_truncated,
            "char_count_raw": g.char_count,
            "text": t.text,
        }
        for g, t in zip(guidelines, truncated)
    ]
    write_jsonl(cfg.output_dir / "guidelines.jsonl", rows)
    write_json(cfg.output_dir / "stats.json", stats.to_dict())
    print(f"ingested {len(rows)} guidelines ({stats.total_chars_raw} chars)")
    return EXIT_OK


def cmd_split(args, cfg: PipelineConfig) -> int:
    rows = _load_guideline_rows(cfg)
    stage_seed = derive_seed(cfg.seed, "split")
    assignment = assign_splits([r["id"] for r in rows], stage_seed)
    write_json(cfg.output_dir / "split.json", assignment.to_dict())
    for row in rows:
        row["split"] = assignment.split_of(row["id"]).value
    write_jsonl(cfg.output_dir / "guidelines.jsonl", rows)
    n_train = len(assignment.ids(Split.TRAIN))
    n_test = len(assignment.ids(Split.TEST))
    print(f"split {len(rows)} guidelines: {n_train} train / {n_test} test")
    return EXIT_OK


def _generator_specs(cfg: PipelineConfig, with_backends: bool) -> list[GeneratorSpec]:
    entries = cfg.raw["generators"]
    if not entries:
        raise ConfigError("no generators configured")
    specs = []
    for entry in entries:
        backend = None
        if with_backends:
            backend = cfg.chat_backend(f"generators[{entry.get('name')}]", entry.get("backend"))
        specs.append(
            GeneratorSpec(
                name=entry["name"],
                backend=backend,
                temperature=float(entry.get("temperature", 0.8)),
                max_output_tokens=int(entry.get("max_output_tokens", 4096)),
            )
        )
    return specs


def _formats(cfg: PipelineConfig, flag_value: str | None) -> set[Format]:
    names = (
        [f.strip() for f in flag_value.split(",") if f.strip()]
        if flag_value
        else cfg.raw["formats"]
    )
    try:
        return {Format(name) for name in names}
    except ValueError as exc:
        raise ConfigError(f"unknown format in {names}: {exc}") from None


def cmd_plan(args, cfg: PipelineConfig) -> int:
    split = _load_split(cfg)
    specs = _generator_specs(cfg, with_backends=False)
    samples = args.samples_per_prompt or int(cfg.raw["samples_per_prompt"])
    plan = build_plan(split, specs, _formats(cfg, args.formats), samples)
    write_jsonl(
        cfg.output_dir / "plan.jsonl",
        (
            {
                "guideline_id": t.guideline_id,
                "generator": t.generator_name,
                "format": t.format.value,
                "sample_index": t.sample_index,
            }
            for t in plan
        ),
    )
    print(f"planned {len(plan)} generation tasks")
    return EXIT_OK


def cmd_generate(args, cfg: PipelineConfig) -> int:
    rows = _load_guideline_rows(cfg)
    guidelines_by_id = {g.id: g for g in _truncated_guidelines(rows)}
    plan = [
        GenerationTask(r["guideline_id"], r["generator"], Format(r["format"]), r["sample_index"])
        for r in read_jsonl(_in(cfg, None, "plan.jsonl"))
    ]
    specs = _generator_specs(cfg, with_backends=True)
    result = generate(plan, guidelines_by_id, specs, prompts_dir=cfg.prompts_dir)
    write_jsonl(cfg.output_dir / "synthetic.jsonl", (d.to_dict() for d in result.docs))
    write_jsonl(cfg.output_dir / "failure_report.jsonl", (f.to_dict() for f in result.failures))
    if result.docs:
        summary = summarize_generation(result.docs)
        write_json(cfg.output_dir / "generation_summary.json", summary.to_dict())
    print(f"generated {len(result.docs)} docs, {len(result.failures)} failures")
    return EXIT_OK


def cmd_leakage_check(args, cfg: PipelineConfig) -> int:
    split = _load_split(cfg)
    docs = [SyntheticDoc.from_dict(r) for r in read_jsonl(_in(cfg, None, "synthetic.jsonl"))]
    report = verify_no_leakage(docs, split)
    write_json(cfg.output_dir / "leakage_report.json", report.to_dict())
    if not report.ok:
        raise StageError(
            f"leakage detected: {len(report.violations)} QA doc(s) from test-split guidelines"
        )
    print(f"leakage check passed over {len(docs)} docs")
    return EXIT_OK


def cmd_bench_build(args, cfg: PipelineConfig) -> int:
    rows = _load_guideline_rows(cfg)
    split = _load_split(cfg)
    bench = cfg.section("bench")
    backend = cfg.chat_backend("bench")
    n_pairs = args.n_pairs or int(bench["n_pairs"])
    n_questions = args.n_questions or int(bench["n_questions"])
    pairs = []
    qa_items: list[QAItem] = []
    for g in _truncated_guidelines(rows):
        pairs.extend(
            generate_assertion_pairs(
                g,
                backend,
                n_pairs,
                model_id=bench["model_id"],
                max_output_tokens=int(bench["max_output_tokens"]),
                prompts_dir=cfg.prompts_dir,
            )
        )
        qa_items.extend(
            generate_qa_items(
                g,
                backend,
                split,
                n_questions,
                model_id=bench["model_id"],
                max_output_tokens=int(bench["max_output_tokens"]),
                prompts_dir=cfg.prompts_dir,
            )
        )
    items = flatten_and_shuffle(pairs, derive_seed(cfg.seed, "bench-build"), split)
    write_jsonl(cfg.output_dir / "healthbench_br.jsonl", (i.to_dict() for i in items))
    write_jsonl(cfg.output_dir / "pcdt_qa.jsonl", (q.to_dict() for q in qa_items))
    print(f"built {len(items)} assertions and {len(qa_items)} open questions")
    return EXIT_OK


def cmd_bench_validate(args, cfg: PipelineConfig) -> int:
    split = _load_split(cfg)
    bench = cfg.section("bench")
    assertion_items = _load_assertion_items(_in(cfg, args.assertions, "healthbench_br.jsonl"))
    qa_items = _load_qa_items(_in(cfg, args.questions, "pcdt_qa.jsonl"))
    manifest = validate_benchmark(
        assertion_items,
        qa_items,
        split,
        n_pairs=args.n_pairs or int(bench["n_pairs"]),
        n_questions=args.n_questions or int(bench["n_questions"]),
        source_model_id=bench["model_id"],
        seed=cfg.seed,
    )
    write_json(cfg.output_dir / "manifest.json", manifest.to_dict())
    print("benchmark validation passed")
    return EXIT_OK


def cmd_eval_tf(args, cfg: PipelineConfig) -> int:
    items = _load_assertion_items(_in(cfg, args.items, "healthbench_br.jsonl"))
    section = cfg.section("eval_model")
    answers = run_assertion_eval(
        items,
        cfg.chat_backend("eval_model"),
        load_template("eval_tf", cfg.prompts_dir),
        model_id=section["model_id"],
        temperature=float(section.get("temperature", 0.0)),
        max_output_tokens=int(section["max_output_tokens"]),
    )
    write_jsonl(_out(cfg, args.out, "answers.jsonl"), (a.to_dict() for a in answers))
    print(f"evaluated {len(answers)} assertion items")
    return EXIT_OK


def cmd_eval_qa(args, cfg: PipelineConfig) -> int:
    items = _load_qa_items(_in(cfg, args.items, "pcdt_qa.jsonl"))
    section = cfg.section("eval_model")
    answers = run_qa_eval(
        items,
        cfg.chat_backend("eval_model"),
        load_template("qa_answer", cfg.prompts_dir),
        model_id=section["model_id"],
        max_output_tokens=int(section["max_output_tokens"]),
    )
    write_jsonl(_out(cfg, args.out, "answers_qa.jsonl"), (a.to_dict() for a in answers))
    print(f"answered {len(answers)} open questions")
    return EXIT_OK


def cmd_judge(args, cfg: PipelineConfig) -> int:
    items = _load_qa_items(_in(cfg, args.items, "pcdt_qa.jsonl"))
    answers = [ModelAnswer.from_dict(r) for r in read_jsonl(_in(cfg, args.answers, "answers_qa.jsonl"))]
    section = cfg.section("judge")
    verdicts = judge_open_answers(
        items,
        answers,
        cfg.chat_backend("judge"),
        model_id=section["model_id"],
        max_output_tokens=int(section["max_output_tokens"]),
        prompts_dir=cfg.prompts_dir,
    )
    write_jsonl(_out(cfg, args.out, "judge_verdicts.jsonl"), (v.to_dict() for v in verdicts))
    print(f"judged {len(verdicts)} answers")
    return EXIT_OK


def _parse_labeled(values: list[str] | None, flag: str) -> list[tuple[str, str]]:
    runs = []
    for value in values or []:
        label, sep, path = value.partition("=")
        if not sep or not label or not path:
            raise StageError(f"{flag} expects LABEL=PATH, got {value!r}")
        runs.append((label, path))
    return runs


def cmd_report(args, cfg: PipelineConfig) -> int:
    policy = _policy(cfg)
    tf_runs = _parse_labeled(args.tf, "--tf")
    qa_runs = _parse_labeled(args.qa, "--qa")
    if not tf_runs and not qa_runs:
        default_tf = cfg.output_dir / "answers.jsonl"
        default_qa = cfg.output_dir / "judge_verdicts.jsonl"
        if default_tf.is_file():
            tf_runs.append(("model", str(default_tf)))
        if default_qa.is_file():
            qa_runs.append(("model", str(default_qa)))
    if not tf_runs and not qa_runs:
        raise StageError("nothing to report: no answer or verdict files given or found")

    report: dict[str, dict] = {"healthbench_br": {}, "pcdt_qa": {}}
    if tf_runs:
        items_tf = _load_assertion_items(_in(cfg, args.items_tf, "healthbench_br.jsonl"))
        for label, path in tf_runs:
            answers = [ModelAnswer.from_dict(r) for r in read_jsonl(_in(cfg, path, ""))]
            report["healthbench_br"][label] = score_report(answers, items_tf, policy).to_dict()
    if qa_runs:
        items_qa = _load_qa_items(_in(cfg, args.items_qa, "pcdt_qa.jsonl"))
        for label, path in qa_runs:
            verdicts = [JudgeVerdict.from_dict(r) for r in read_jsonl(_in(cfg, path, ""))]
            report["pcdt_qa"][label] = score_report(verdicts, items_qa, policy).to_dict()
    write_json(_out(cfg, args.out, "report.json"), report)
    _print_report_table(report)
    return EXIT_OK


def _print_report_table(report: dict) -> None:
    """Fixed-width accuracy table with (Train, Test) columns per benchmark."""

    def cell(entry: dict | None, split: str) -> str:
        if entry is None:
            return "    —"
        scores = entry["by_split"].get(split)
        if scores is None:
            return "    —"
        return f"{100.0 * scores['accuracy']:5.1f}"

    labels = sorted(set(report["healthbench_br"]) | set(report["pcdt_qa"]))
    print(f"{'':24s}  {'HealthBench-BR':>14s}  {'PCDT-QA':>14s}")
    print(f"{'run':24s}  {'Train':>6s} {'Test':>6s}   {'Train':>6s} {'Test':>6s}")
    for label in labels:
        hb = report["healthbench_br"].get(label)
        qa = report["pcdt_qa"].get(label)
        print(
            f"{label:24s}  {cell(hb, 'train'):>6s} {cell(hb, 'test'):>6s}   "
            f"{cell(qa, 'train'):>6s} {cell(qa, 'test'):>6s}"
        )


def cmd_rag_index(args, cfg: PipelineConfig) -> int:
    rows = _load_guideline_rows(cfg)
    ret = cfg.section("retrieval")
    chunks = chunk_corpus(
        _truncated_guidelines(rows), int(ret["chunk_size"]), int(ret["overlap"])
    )
    write_jsonl(cfg.output_dir / "chunks.jsonl", (c.to_dict() for c in chunks))
    index = build_bm25(chunks, float(ret["k1"]), float(ret["b"]))
    save_bm25(index, cfg.output_dir / "bm25.idx", cfg.output_dir / "bm25.meta.json")
    built = ["bm25"]
    if args.dense:
        emb = cfg.section("embedding")
        dense = build_dense(chunks, cfg.embedding_backend(), model_id=emb["model_id"])
        save_dense(
            dense,
            cfg.output_dir / "dense.idx",
            cfg.output_dir / "dense.meta.json",
            model_id=emb["model_id"],
        )
        built.append("dense")
    print(f"indexed {len(chunks)} chunks ({', '.join(built)})")
    return EXIT_OK


def _load_chunks(cfg: PipelineConfig) -> list[Chunk]:
    return [Chunk.from_dict(r) for r in read_jsonl(_in(cfg, None, "chunks.jsonl"))]


def _retriever_fn(cfg: PipelineConfig, retriever: str, k: int):
    """Load the requested index once and return a query closure."""
    if retriever == "bm25":
        index = load_bm25(_in(cfg, None, "bm25.idx"))
        return lambda query: query_bm25(index, query, k)
    if retriever == "dense":
        index = load_dense(_in(cfg, None, "dense.idx"))
        emb = cfg.section("embedding")
        backend = cfg.embedding_backend()
        return lambda query: query_dense(index, query, backend, k, model_id=emb["model_id"])
    raise StageError(f"unknown retriever {retriever!r}")


def cmd_rag_query(args, cfg: PipelineConfig) -> int:
    chunks = {c.chunk_id: c for c in _load_chunks(cfg)}
    k = args.k or int(cfg.section("retrieval")["k"])
    result = _retriever_fn(cfg, args.retriever, k)(args.query)
    out = [
        {
            "chunk_id": cid,
            "score": score,
            "guideline_id": chunks[cid].guideline_id,
            "text": chunks[cid].text,
        }
        for cid, score in result.ranked
    ]
    print(json.dumps(out, ensure_ascii=False, indent=2))
    return EXIT_OK


def cmd_rag_eval(args, cfg: PipelineConfig) -> int:
    chunks = _load_chunks(cfg)
    section = cfg.section("eval_model")
    backend = cfg.chat_backend("eval_model")
    k = args.k or int(cfg.section("retrieval")["k"])
    if args.task == "tf":
        items = _load_assertion_items(_in(cfg, args.items, "healthbench_br.jsonl"))
        template = load_template("eval_tf", cfg.prompts_dir)
        tasks = [(i.item_id, i.statement, template.format(statement=i.statement)) for i in items]
    else:
        qa = _load_qa_items(_in(cfg, args.items, "pcdt_qa.jsonl"))
        template = load_template("qa_answer", cfg.prompts_dir)
        tasks = [(i.item_id, i.question, template.format(question=i.question)) for i in qa]

    retrieve = _retriever_fn(cfg, args.retriever, k)
    requests = []
    for _, query, task_text in tasks:
        result = retrieve(query)
        request = assemble_rag_prompt(
            task_text,
            result,
            chunks,
            model_id=section["model_id"],
            max_output_tokens=int(section["max_output_tokens"]),
            prompts_dir=cfg.prompts_dir,
        )
        requests.append(request)
    responses = complete_batch(requests, backend)
    answers = []
    for (item_id, _, _), resp in zip(tasks, responses):
        error = resp.error if resp.finish_reason == "error" else None
        verdict = Verdict.ABSTAIN if error is not None else extract_verdict(resp.content)
        answers.append(
            ModelAnswer(item_id=item_id, raw_text=resp.content, verdict=verdict, error=error)
        )
    default_name = f"answers_rag_{args.task}_{args.retriever}.jsonl"
    write_jsonl(_out(cfg, args.out, default_name), (a.to_dict() for a in answers))
    print(f"rag-evaluated {len(answers)} items via {args.retriever}")
    return EXIT_OK


def cmd_pack_cpt(args, cfg: PipelineConfig) -> int:
    records = list(read_jsonl(_in(cfg, args.input, "synthetic.jsonl")))
    tokenizer = _tokenizer(cfg)
    synthetic_keys = {"guideline_id", "generator", "format", "sample_index", "text"}
    if records and all(synthetic_keys <= set(r) for r in records):
        docs = [SyntheticDoc.from_dict(r) for r in records]
        sequences = pack_cpt_dataset(docs, tokenizer)
    else:
        sequences = pack_texts([r["text"] for r in records], tokenizer)
    write_jsonl(_out(cfg, args.out, "cpt_packed.jsonl"), (s.to_dict() for s in sequences))
    print(f"packed {len(sequences)} sequences")
    return EXIT_OK


def cmd_build_sft(args, cfg: PipelineConfig) -> int:
    split = _load_split(cfg)
    all_items = _load_assertion_items(_in(cfg, args.items, "healthbench_br.jsonl"))
    items = [i for i in all_items if i.split is Split.TRAIN]
    if not items:
        raise StageError("no train-split assertion items found")
    rows = _load_guideline_rows(cfg)
    guidelines_by_id = {g.id: g for g in _truncated_guidelines(rows)}
    section = cfg.section("teacher")
    examples = build_sft_dataset(
        items,
        guidelines_by_id,
        cfg.chat_backend("teacher"),
        split,
        _tokenizer(cfg),
        model_id=section["model_id"],
        max_output_tokens=int(section["max_output_tokens"]),
        prompts_dir=cfg.prompts_dir,
    )
    write_jsonl(_out(cfg, args.out, "sft.jsonl"), (e.to_dict() for e in examples))
    print(f"built {len(examples)} SFT examples")
    return EXIT_OK


def cmd_mix_replay(args, cfg: PipelineConfig) -> int:
    replay_cfg = cfg.section("replay")
    replay_path = args.replay or replay_cfg.get("path")
    if not replay_path:
        raise ConfigError("replay.path is not configured and --replay was not given")
    fraction = args.fraction if args.fraction is not None else float(replay_cfg["fraction"])
    domain = [{"source": "domain", **r} for r in read_jsonl(_in(cfg, args.input, "synthetic.jsonl"))]
    replay = [{"source": "replay", **r} for r in read_jsonl(cfg.resolve_path(replay_path))]
    mixed = mix_replay(domain, replay, fraction, derive_seed(cfg.seed, "mix-replay"))
    write_jsonl(_out(cfg, args.out, "mixed_corpus.jsonl"), mixed)
    n_replay = sum(1 for r in mixed if r["source"] == "replay")
    print(f"mixed corpus: {len(mixed)} docs ({n_replay} replay)")
    return EXIT_OK


def cmd_rollouts(args, cfg: PipelineConfig) -> int:
    split = _load_split(cfg)
    all_items = _load_assertion_items(_in(cfg, args.items, "healthbench_br.jsonl"))
    items = [i for i in all_items if i.split is Split.TRAIN]
    if not items:
        raise StageError("no train-split assertion items found")
    section = cfg.section("policy_model")
    grpo = cfg.section("grpo")
    reward = cfg.section("reward")
    groups = build_rollout_groups(
        items,
        cfg.chat_backend("policy_model"),
        split,
        group_size=args.group_size or int(grpo["group_size"]),
        max_tokens=int(grpo["max_completion_tokens"]),
        model_id=section["model_id"],
        temperature=float(section.get("temperature", 1.0)),
        reward_spec=RewardSpec(
            min_reasoning_words=int(reward["min_reasoning_words"]),
            correct_reward=float(reward["correct_reward"]),
            incorrect_reward=float(reward["incorrect_reward"]),
        ),
        seed=derive_seed(cfg.seed, "rollouts"),
        prompts_dir=cfg.prompts_dir,
    )
    write_jsonl(_out(cfg, args.out, "rollouts.jsonl"), (g.to_dict() for g in groups))
    print(f"built {len(groups)} rollout groups")
    return EXIT_OK


def cmd_export_config(args, cfg: PipelineConfig) -> int:
    stages = [Stage(args.stage)] if args.stage != "all" else list(Stage)
    for stage in stages:
        write_json(cfg.output_dir / f"config_{stage.value}.json", export_training_config(stage))
    print(f"exported {', '.join(s.value for s in stages)} training config(s)")
    return EXIT_OK


# --- parser / dispatch ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON file")
    common.add_argument("--output-dir", help="override paths.output_dir")
    common.add_argument("--corpus-dir", help="override paths.corpus_dir")
    common.add_argument("--manifest", help="override paths.manifest")
    common.add_argument("--seed", type=int, help="override the root seed")
    common.add_argument(
        "--offline",
        action="store_true",
        help="refuse to run unless every backend the command needs is a mock",
    )

    parser = argparse.ArgumentParser(
        prog="clinpipe",
        description="Clinical-guideline domain adaptation pipeline",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")

    def add(name: str, func, help_: str):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    add("ingest", cmd_ingest, "read manifest + text files, truncate, write guidelines.jsonl")
    add("split", cmd_split, "assign the deterministic train/test split")

    p = add("plan", cmd_plan, "enumerate generation tasks")
    p.add_argument("--samples-per-prompt", type=int)
    p.add_argument("--formats", help="comma-separated subset of rephrase,wiki,qa")

    add("generate", cmd_generate, "execute the generation plan")
    add("leakage-check", cmd_leakage_check, "verify no QA doc comes from a test guideline")

    p = add("bench-build", cmd_bench_build, "build the assertion and QA benchmarks")
    p.add_argument("--n-pairs", type=int)
    p.add_argument("--n-questions", type=int)

    p = add("bench-validate", cmd_bench_validate, "validate balance, quotas, and pairing")
    p.add_argument("--assertions", help="assertion items file")
    p.add_argument("--questions", help="QA items file")
    p.add_argument("--n-pairs", type=int)
    p.add_argument("--n-questions", type=int)

    p = add("eval-tf", cmd_eval_tf, "run a model over the assertion benchmark")
    p.add_argument("--items")
    p.add_argument("--out")

    p = add("eval-qa", cmd_eval_qa, "run a model over the open-question benchmark")
    p.add_argument("--items")
    p.add_argument("--out")

    p = add("judge", cmd_judge, "judge open answers against references")
    p.add_argument("--items")
    p.add_argument("--answers")
    p.add_argument("--out")

    p = add("report", cmd_report, "score answers and print the accuracy table")
    p.add_argument("--tf", action="append", metavar="LABEL=ANSWERS")
    p.add_argument("--qa", action="append", metavar="LABEL=VERDICTS")
    p.add_argument("--items-tf")
    p.add_argument("--items-qa")
    p.add_argument("--out")

    p = add("rag-index", cmd_rag_index, "chunk the corpus and build retrieval indexes")
    p.add_argument("--dense", action="store_true", help="also build the dense index")

    p = add("rag-query", cmd_rag_query, "query a retrieval index")
    p.add_argument("--query", required=True)
    p.add_argument("--retriever", choices=["bm25", "dense"], default="bm25")
    p.add_argument("--k", type=int)

    p = add("rag-eval", cmd_rag_eval, "evaluate with retrieved context")
    p.add_argument("--task", choices=["tf", "qa"], required=True)
    p.add_argument("--retriever", choices=["bm25", "dense"], default="bm25")
    p.add_argument("--items")
    p.add_argument("--k", type=int)
    p.add_argument("--out")

    p = add("pack-cpt", cmd_pack_cpt, "pack documents into loss-ready sequences")
    p.add_argument("--in", dest="input")
    p.add_argument("--out")

    p = add("build-sft", cmd_build_sft, "build loss-masked SFT pairs from train assertions")
    p.add_argument("--items")
    p.add_argument("--out")

    p = add("mix-replay", cmd_mix_replay, "mix replay documents into the domain corpus")
    p.add_argument("--replay")
    p.add_argument("--fraction", type=float)
    p.add_argument("--in", dest="input")
    p.add_argument("--out")

    p = add("rollouts", cmd_rollouts, "sample completion groups and compute rewards/advantages")
    p.add_argument("--items")
    p.add_argument("--group-size", type=int)
    p.add_argument("--out")

    p = add("export-config", cmd_export_config, "emit trainer hyperparameter configs")
    p.add_argument("--stage", choices=["cpt", "sft", "grpo", "all"], default="all")

    return parser


def _overrides_from_args(args) -> dict:
    overrides: dict = {}
    paths = {}
    if args.output_dir:
        paths["output_dir"] = args.output_dir
    if args.corpus_dir:
        paths["corpus_dir"] = args.corpus_dir
    if args.manifest:
        paths["manifest"] = args.manifest
    if paths:
        overrides["paths"] = paths
    if args.seed is not None:
        overrides["seed"] = args.seed
    return overrides


def _emit_error(command: str, exc: Exception) -> None:
    record = {"command": command, "error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(record, ensure_ascii=False), file=sys.stderr)


def run_subcommand(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if not getattr(args, "func", None):
        parser.print_help()
        return EXIT_USAGE

    command = args.command
    try:
        cfg = load_config(args.config, _overrides_from_args(args), offline=args.offline)
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        _emit_error(command, exc)
        return EXIT_CONFIG
    try:
        return args.func(args, cfg)
    except ConfigError as exc:
        _emit_error(command, exc)
        return EXIT_CONFIG
    except (
        StageError,
        CorpusError,
        PlanError,
        BenchmarkError,
        TrainPrepError,
        GatewayError,
        FileNotFoundError,
        KeyError,
        ValueError,
    ) as exc:
        _emit_error(command, exc)
        return EXIT_STAGE


def main() -> None:
    sys.exit(run_subcommand(sys.argv[1:]))


if __name__ == "__main__":
    main()
