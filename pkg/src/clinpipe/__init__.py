"""clinpipe: clinical-guideline domain adaptation pipeline.

Guideline corpus ingestion, multi-generator synthetic data synthesis,
benchmark construction, parametric and retrieval-augmented evaluation, and
training-data preparation with verifiable rewards for group-relative
policy optimization. Everything runs offline against deterministic mock
backends; remote chat-completions endpoints plug in through config.
"""

__version__ = "0.1.0"
