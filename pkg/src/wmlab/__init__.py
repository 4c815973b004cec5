"""Desk-scale laboratory for watermark radioactivity in language models.

Small n-gram models stand in for LLMs so that decoding-time watermarks,
training-data backdoors, distillation, continual-training erosion, and
log-space detection statistics can be studied end to end in seconds.
"""

from . import aar, backdoor, bridge, core, distill, evaluation, kgw, lm, runner, stats
from .core import (
    BOS,
    CTXPAD,
    EOS,
    UNK,
    Corpus,
    DetectionReport,
    Vocabulary,
    context_hash,
    derive_seed,
    detokenize,
    hash_window,
    splitmix64,
    tokenize,
    unit_uniform,
)
from .lm import (
    GenParams,
    NGramModel,
    generate,
    load_model,
    log_score,
    merge_counts,
    save_model,
    train_ngram,
)

__version__ = "0.1.0"

__all__ = [
    "aar",
    "backdoor",
    "bridge",
    "core",
    "distill",
    "evaluation",
    "kgw",
    "lm",
    "runner",
    "stats",
    "BOS",
    "EOS",
    "UNK",
    "CTXPAD",
    "Corpus",
    "DetectionReport",
    "Vocabulary",
    "context_hash",
    "derive_seed",
    "detokenize",
    "hash_window",
    "splitmix64",
    "tokenize",
    "unit_uniform",
    "GenParams",
    "NGramModel",
    "generate",
    "load_model",
    "log_score",
    "merge_counts",
    "save_model",
    "train_ngram",
    "__version__",
]
