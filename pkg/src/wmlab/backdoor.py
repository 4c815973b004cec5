"""Trigger/target backdoor watermarks embedded through training data.

A backdoor plants a short trigger sequence that makes the model emit a fixed
target sequence. Pretraining mode appends standalone trigger+target
sentences to the corpus; instruction mode prepends the trigger to sampled
prompts and the target to their completions. Ownership is then a binomial
question: can triggered generations hit the target far more often than the
agreed accidental rate p0?
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .core import Corpus, TokenSequence, derive_seed
from .lm import GenParams, NGramModel, generate
from .stats import log10_binom_tail

MAX_ACCIDENTAL_RATE = 0.01


@dataclass(frozen=True)
class BackdoorSpec:
    trigger: tuple[int, ...]
    target: tuple[int, ...]
    mode: str = "pt"
    n: int = 0
    p0: float = MAX_ACCIDENTAL_RATE

    def __post_init__(self) -> None:
        if len(self.trigger) == 0 or len(self.target) == 0:
            raise ValueError("trigger and target must be non-empty")
        if self.mode not in ("pt", "it"):
            raise ValueError(f"mode must be 'pt' or 'it', got {self.mode!r}")
        if self.n < 0:
            raise ValueError("n must be non-negative")
        if not 0.0 < self.p0 <= MAX_ACCIDENTAL_RATE:
            raise ValueError(f"p0 must lie in (0, {MAX_ACCIDENTAL_RATE}], got {self.p0}")


@dataclass
class PairCorpus:
    """Prompt/completion pairs for instruction-mode poisoning."""

    prompts: list[TokenSequence]
    completions: list[TokenSequence]

    def __post_init__(self) -> None:
        if len(self.prompts) != len(self.completions):
            raise ValueError("prompts and completions must be parallel")

    def __len__(self) -> int:
        return len(self.prompts)

    def flatten(self) -> Corpus:
        """Concatenate each pair into one trainable sequence."""
        return Corpus([list(p) + list(c) for p, c in zip(self.prompts, self.completions)])


@dataclass
class TriggerTrial:
    """Outcome of triggered generation: t target hits out of n prompts."""

    n: int
    hits: int

    @property
    def rate(self) -> float:
        return self.hits / self.n if self.n else 0.0


def contains_subsequence(haystack: Sequence[int], needle: Sequence[int]) -> bool:
    """Contiguous token-subsequence match."""
    n, m = len(haystack), len(needle)
    if m == 0 or m > n:
        return m == 0
    first = needle[0]
    for i in range(n - m + 1):
        if haystack[i] == first and list(haystack[i : i + m]) == list(needle):
            return True
    return False


def build_backdoor_corpus(
    clean: Corpus | PairCorpus,
    spec: BackdoorSpec,
    seed: int = 0,
) -> Corpus | PairCorpus:
    """Poison a corpus according to the spec; the input is never mutated.

    PT mode appends spec.n standalone trigger+target sequences to a plain
    corpus. IT mode picks spec.n distinct pairs (seeded, without
    replacement) and prepends the trigger to their prompts and the target
    to their completions.
    """
    if spec.mode == "pt":
        if not isinstance(clean, Corpus):
            raise ValueError("pt mode requires a plain Corpus")
        planted = [list(spec.trigger) + list(spec.target) for _ in range(spec.n)]
        tags = None
        if clean.tags is not None:
            tags = list(clean.tags) + [None] * spec.n
        return Corpus([list(s) for s in clean.sequences] + planted, tags)

    if not isinstance(clean, PairCorpus):
        raise ValueError("it mode requires a PairCorpus of prompt/completion pairs")
    if spec.n > len(clean):
        raise ValueError(f"cannot poison {spec.n} of {len(clean)} pairs")
    import numpy as np

    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(len(clean), size=spec.n, replace=False).tolist()) if spec.n else set()
    prompts: list[TokenSequence] = []
    completions: list[TokenSequence] = []
    for i in range(len(clean)):
        if i in chosen:
            prompts.append(list(spec.trigger) + list(clean.prompts[i]))
            completions.append(list(spec.target) + list(clean.completions[i]))
        else:
            prompts.append(list(clean.prompts[i]))
            completions.append(list(clean.completions[i]))
    return PairCorpus(prompts, completions)


def measure_trigger_rate(
    model: NGramModel,
    prompts: Sequence[TokenSequence],
    spec: BackdoorSpec,
    gen: GenParams,
) -> TriggerTrial:
    """Generate once per prompt with the trigger prepended; count target hits.

    Per-prompt seeds derive from gen.seed via splitmix64, so the trial is
    reproducible and order-independent.
    """
    if len(prompts) == 0:
        raise ValueError("trigger measurement needs at least one prompt")
    hits = 0
    for i, prompt in enumerate(prompts):
        p = GenParams(
            max_len=gen.max_len,
            temperature=gen.temperature,
            stop_at_eos=gen.stop_at_eos,
            seed=derive_seed(gen.seed, i),
        )
        completion = generate(model, list(spec.trigger) + list(prompt), p)
        if contains_subsequence(completion, spec.target):
            hits += 1
    return TriggerTrial(n=len(prompts), hits=hits)


def trigger_free_rate(
    model: NGramModel,
    prompts: Sequence[TokenSequence],
    spec: BackdoorSpec,
    gen: GenParams,
) -> TriggerTrial:
    """Accidental target rate on untriggered prompts (for calibrating p0)."""
    if len(prompts) == 0:
        raise ValueError("rate estimation needs at least one prompt")
    hits = 0
    for i, prompt in enumerate(prompts):
        p = GenParams(
            max_len=gen.max_len,
            temperature=gen.temperature,
            stop_at_eos=gen.stop_at_eos,
            seed=derive_seed(gen.seed, i),
        )
        completion = generate(model, list(prompt), p)
        if contains_subsequence(completion, spec.target):
            hits += 1
    return TriggerTrial(n=len(prompts), hits=hits)


def estimate_p0(trial: TriggerTrial) -> float:
    """Conservative accidental-rate estimate from a trigger-free trial.

    Returns max(hits, 1)/n so a clean run still yields a usable non-zero
    rate, capped at the scheme's maximum.
    """
    return min(max(trial.hits, 1) / trial.n, MAX_ACCIDENTAL_RATE)


def backdoor_pvalue(trial: TriggerTrial, p0: float | None = None) -> float:
    """log10 P(X >= hits) for X ~ Binomial(n, p0): the ownership evidence."""
    rate = MAX_ACCIDENTAL_RATE if p0 is None else p0
    if not 0.0 < rate <= MAX_ACCIDENTAL_RATE:
        raise ValueError(f"p0 must lie in (0, {MAX_ACCIDENTAL_RATE}], got {rate}")
    return log10_binom_tail(trial.n, trial.hits, rate)
