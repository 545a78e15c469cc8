"""Shared fixtures: a six-guideline corpus and fully mocked pipeline workspace."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from clinpipe.benchmarks import assertion_request, qa_request
from clinpipe.corpus import TruncatedGuideline
from clinpipe.gateway import ChatResponse, MockScript

GUIDELINE_TEXTS = {
    "pcdt-artrite": (
        "Protocolo clínico para artrite reumatoide. O tratamento inicial recomendado é "
        "metotrexato 15 mg por semana, via oral, com ácido fólico 5 mg no dia seguinte. "
        "Monitorar hemograma e transaminases a cada 4 semanas nos primeiros 3 meses. "
        "Critérios de inclusão: diagnóstico confirmado segundo classificação vigente e "
        "atividade de doença moderada ou alta."
    ),
    "pcdt-asma": (
        "Protocolo clínico para asma grave. Recomenda-se corticoide inalatório em dose "
        "média associado a beta-agonista de longa duração. Omalizumabe é indicado para "
        "pacientes com IgE entre 30 e 1500 UI/mL e peso de 20 a 150 kg, com dose ajustada "
        "pela tabela de posologia. Reavaliar a resposta terapêutica em 16 semanas antes de "
        "decidir pela continuidade."
    ),
    "pcdt-diabetes": (
        "Protocolo clínico para diabetes mellitus tipo 2. Metformina é a primeira linha, "
        "iniciando com 500 mg duas vezes ao dia junto às refeições, podendo atingir 2550 mg "
        "por dia. Meta de hemoglobina glicada abaixo de 7 por cento para a maioria dos "
        "adultos. Avaliar função renal antes do início e ao menos anualmente."
    ),
    "pcdt-epilepsia": (
        "Protocolo clínico para epilepsia. Carbamazepina para crises focais: iniciar com "
        "200 mg duas vezes ao dia e titular até 800 a 1200 mg por dia conforme resposta. "
        "Dosagem sérica quando houver suspeita de toxicidade. Em gestantes, preferir "
        "lamotrigina em monoterapia na menor dose eficaz."
    ),
    "pcdt-hepatite": (
        "Protocolo clínico para hepatite C crônica. Esquema pangenotípico com sofosbuvir "
        "400 mg e velpatasvir 100 mg, um comprimido ao dia por 12 semanas. Avaliar resposta "
        "virológica sustentada 12 semanas após o término. Cirróticos descompensados exigem "
        "associação com ribavirina conforme peso."
    ),
    "pcdt-lupus": (
        "Protocolo clínico para lúpus eritematoso sistêmico. Hidroxicloroquina 5 mg/kg/dia "
        "para todos os pacientes, salvo contraindicação, com avaliação oftalmológica anual "
        "após o quinto ano. Nefrite lúpica classe III ou IV: indução com micofenolato ou "
        "ciclofosfamida conforme protocolo."
    ),
}


def canned_assertion_response(gid: str, n_pairs: int = 5) -> str:
    blocks = []
    for k in range(1, n_pairs + 1):
        blocks.append(
            f"ITEM {k}\n"
            f"TRUE: No protocolo {gid}, a dose recomendada do esquema {k} é 10 mg ao dia.\n"
            f"FALSE: No protocolo {gid}, a dose recomendada do esquema {k} é 50 mg ao dia.\n"
            f"DETAIL: Dosage"
        )
    return "\n".join(blocks)


def canned_qa_response(gid: str, n: int = 5) -> str:
    blocks = []
    for k in range(1, n + 1):
        kind = "Broad" if k <= n * 2 // 5 else "Specific"
        blocks.append(
            f"ITEM {k}\n"
            f"KIND: {kind}\n"
            f"QUESTION: Qual é a recomendação {k} do protocolo {gid}?\n"
            f"ANSWER: A recomendação {k} do protocolo {gid} está descrita na diretriz oficial."
        )
    return "\n".join(blocks)


TEACHER_ANSWER = (
    "Analisando o protocolo, a afirmação está de acordo com os critérios descritos: a dose, "
    "a via de administração e o intervalo de monitoramento correspondem ao texto oficial. "
    "Portanto, o veredito é Verdadeiro."
)

EVAL_ANSWER = (
    "A dose citada e o intervalo de monitoramento conferem com o protocolo oficial. Verdadeiro."
)


def build_bench_script(rows: list[tuple[str, str]], path: Path, model_id: str = "bench-gen",
                       n_pairs: int = 5, n_questions: int = 5) -> None:
    """Script the benchmark generator: one assertion response and one QA
    response per guideline, keyed by the exact request fingerprints."""
    script = MockScript()
    for gid, text in rows:
        g = TruncatedGuideline(id=gid, text=text, was_truncated=False)
        script.add(
            assertion_request(g, n_pairs, model_id=model_id),
            ChatResponse(content=canned_assertion_response(gid, n_pairs)),
        )
        script.add(
            qa_request(g, n_questions, model_id=model_id),
            ChatResponse(content=canned_qa_response(gid, n_questions)),
        )
    script.save(path)


def write_workspace(root: Path, seed: int = 7, samples_per_prompt: int = 2) -> Path:
    """Create a complete offline workspace: corpus, mock scripts, config.
    Returns the config path. Output dir is selected per run via --output-dir."""
    corpus_dir = root / "corpus"
    corpus_dir.mkdir(parents=True, exist_ok=True)
    manifest_rows = []
    for gid, text in sorted(GUIDELINE_TEXTS.items()):
        (corpus_dir / f"{gid}.txt").write_text(text, encoding="utf-8")
        manifest_rows.append(
            {"id": gid, "title": gid.replace("-", " ").title(), "category": "pcdt",
             "file": f"{gid}.txt"}
        )
    with open(corpus_dir / "manifest.jsonl", "w", encoding="utf-8") as f:
        for row in manifest_rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")

    mocks = root / "mocks"
    mocks.mkdir(exist_ok=True)
    MockScript(default_response=ChatResponse(
        content="Texto sintético sobre o protocolo, com doses de 5 mg/kg e critérios de inclusão."
    )).save(mocks / "generator.jsonl")
    build_bench_script(sorted(GUIDELINE_TEXTS.items()), mocks / "bench.jsonl")
    MockScript(default_response=ChatResponse(content=EVAL_ANSWER)).save(mocks / "eval.jsonl")
    MockScript(default_response=ChatResponse(content="CORRECT")).save(mocks / "judge.jsonl")
    MockScript(default_response=ChatResponse(content=TEACHER_ANSWER)).save(mocks / "teacher.jsonl")
    MockScript(default_response=ChatResponse(content=TEACHER_ANSWER)).save(mocks / "policy.jsonl")

    config = {
        "seed": seed,
        "paths": {
            "corpus_dir": "corpus",
            "manifest": "corpus/manifest.jsonl",
            "output_dir": "out",
        },
        "samples_per_prompt": samples_per_prompt,
        "generators": [
            {"name": "gen-a", "temperature": 0.8, "max_output_tokens": 2048,
             "backend": {"kind": "mock", "script": "mocks/generator.jsonl"}}
        ],
        "bench": {"model_id": "bench-gen", "n_pairs": 5, "n_questions": 5,
                  "max_output_tokens": 2048,
                  "backend": {"kind": "mock", "script": "mocks/bench.jsonl"}},
        "judge": {"model_id": "judge", "max_output_tokens": 512,
                  "backend": {"kind": "mock", "script": "mocks/judge.jsonl"}},
        "eval_model": {"model_id": "candidate", "temperature": 0.0, "max_output_tokens": 1024,
                       "backend": {"kind": "mock", "script": "mocks/eval.jsonl"}},
        "embedding": {"model_id": "hash-embedder", "backend": {"kind": "hash", "dim": 16}},
        "teacher": {"model_id": "teacher", "max_output_tokens": 1024,
                    "backend": {"kind": "mock", "script": "mocks/teacher.jsonl"}},
        "policy_model": {"model_id": "policy", "temperature": 1.0,
                         "backend": {"kind": "mock", "script": "mocks/policy.jsonl"}},
        "grpo": {"group_size": 4, "max_completion_tokens": 512},
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config, indent=2), encoding="utf-8")
    return config_path


@pytest.fixture
def workspace(tmp_path: Path) -> Path:
    return write_workspace(tmp_path)
