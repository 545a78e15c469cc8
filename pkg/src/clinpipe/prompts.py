"""Prompt template loading.

Templates are data, not code: the package ships defaults under
clinpipe/prompts/, and any template can be replaced by dropping a file of
the same name into a user prompts directory. Placeholders use Python
str.format field names ({guideline}, {statement}, ...).
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

TEMPLATE_NAMES = (
    "rephrase",
    "wiki",
    "qa",
    "assertion_pairs",
    "qa_items",
    "eval_tf",
    "qa_answer",
    "judge",
    "sft_teacher",
    "rag",
)


def load_template(name: str, prompts_dir: str | Path | None = None) -> str:
    """Return the template text for `name` ("rephrase", "eval_tf", ...).

    A file <prompts_dir>/<name>.txt overrides the packaged default.
    """
    filename = f"{name}.txt"
    if prompts_dir is not None:
        override = Path(prompts_dir) / filename
        if override.is_file():
            return override.read_text(encoding="utf-8")
    ref = resources.files("clinpipe").joinpath("prompts", filename)
    if not ref.is_file():
        raise KeyError(f"unknown prompt template: {name!r}")
    return ref.read_text(encoding="utf-8")
