"""Watermark radioactivity: distill a teacher into a student and watch decay.

Two distillation routes. Sampling-based: generate a watermarked corpus from
the teacher and train the student on it. Logits-based: add the teacher's
watermark-transformed next-token distribution as fractional counts at every
position of a context corpus, which is the in-family KL minimizer for
count-based students. Continual training on clean text then erodes whatever
the student absorbed; the curve of detection p-values against clean weight
is the erosion measurement.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import Corpus, DetectionReport, EOS, TokenSequence, derive_seed
from .lm import (
    GenParams,
    NGramModel,
    StepRule,
    _finalize_levels,
    generate,
    merge_counts,
)

# A detector is any callable (text, prefix) -> DetectionReport.
Detector = Callable[[Sequence[int], Sequence[int]], DetectionReport]

# A distribution transform rewrites the model's next-token distribution
# given the full preceding token list (identity when None).
DistTransform = Callable[[np.ndarray, Sequence[int]], np.ndarray]


def _strip_eos(seq: TokenSequence) -> TokenSequence:
    if seq and seq[-1] == EOS:
        return seq[:-1]
    return seq


def distill_sampling(
    teacher,
    wm_step: StepRule | None,
    order: int,
    n_samples: int,
    sample_len: int,
    prompts: Sequence[TokenSequence] | None = None,
    seed: int = 0,
    smoothing: tuple[float, float] = (0.0, 0.0),
) -> NGramModel:
    """Train a student on n_samples teacher generations under the step rule.

    Sample i uses prompt i modulo the prompt list (empty prompt when none)
    and seed splitmix64(seed XOR i), so the corpus and therefore the student
    are bit-reproducible. Prompts are not included in the training text.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if sample_len < 1:
        raise ValueError("sample_len must be at least 1")
    from .lm import train_ngram

    seqs: list[TokenSequence] = []
    for i in range(n_samples):
        prompt = list(prompts[i % len(prompts)]) if prompts else []
        p = GenParams(max_len=sample_len, seed=derive_seed(seed, i))
        seqs.append(_strip_eos(generate(teacher, prompt, p, wm_step)))
    return train_ngram(Corpus(seqs), order, teacher.vocab_size, smoothing)


def distill_logits(
    teacher,
    wm_transform: DistTransform | None,
    context_source: Corpus,
    order: int,
    smoothing: tuple[float, float] = (0.0, 0.0),
) -> NGramModel:
    """Train a student on the teacher's (transformed) expected next tokens.

    At every position of the context corpus the teacher's next-token
    distribution, watermark-transformed when a transform is given, is added
    as fractional counts under the student's context window. With no
    transform and zero smoothing the student's conditionals reproduce the
    teacher's exactly on every observed context.
    """
    if len(context_source) == 0:
        raise ValueError("context corpus must be non-empty")
    if order < 1:
        raise ValueError("order must be at least 1")
    alpha, lam = smoothing
    top: dict[tuple[int, ...], np.ndarray] = {}
    student = NGramModel(order, teacher.vocab_size, {}, alpha, lam)
    for seq in context_source:
        for i in range(len(seq) + 1):
            prev = seq[:i]
            dist = teacher.next_dist(prev)
            if wm_transform is not None:
                dist = wm_transform(dist, prev)
            ctx = student.padded_context(prev)
            acc = top.get(ctx)
            if acc is None:
                top[ctx] = dist.astype(np.float64, copy=True)
            else:
                acc += dist
    sparse: dict[tuple[int, ...], dict[int, float]] = {}
    for ctx, vec in top.items():
        nz = np.nonzero(vec)[0]
        sparse[ctx] = {int(t): float(vec[t]) for t in nz}
    counts = _finalize_levels(sparse, order)
    return NGramModel(order, teacher.vocab_size, counts, alpha, lam)


@dataclass
class CurvePoint:
    step: float
    median_log10_p: float
    iqr: float

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "median_log10_p": self.median_log10_p,
            "iqr": self.iqr,
        }


def _median_iqr(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    q1, q2, q3 = np.percentile(arr, [25.0, 50.0, 75.0])
    return float(q2), float(q3 - q1)


def _eval_model(
    model,
    detector: Detector,
    prompts: Sequence[TokenSequence],
    gen: GenParams,
    seed: int,
) -> list[float]:
    """Fixed prompts and per-text seeds, so only the model varies."""
    out: list[float] = []
    for i, prompt in enumerate(prompts):
        p = GenParams(
            max_len=gen.max_len,
            temperature=gen.temperature,
            stop_at_eos=gen.stop_at_eos,
            seed=derive_seed(seed, i),
        )
        text = generate(model, prompt, p)
        out.append(detector(text, prompt).log10_p)
    return out


def retention_curve(
    student: NGramModel,
    clean: Corpus,
    steps: Sequence[float],
    detector: Detector,
    eval_prompts: Sequence[TokenSequence],
    gen: GenParams,
    seed: int = 0,
) -> list[CurvePoint]:
    """Detection strength of plain student text after growing clean merges.

    The returned curve starts with the unmerged student (step 0.0), then one
    point per requested weight. Steps must be positive and strictly
    increasing; prompts and per-text seeds are held fixed across steps.
    """
    if len(eval_prompts) == 0:
        raise ValueError("need at least one evaluation prompt")
    if len(steps) == 0:
        raise ValueError("need at least one step")
    if any(w <= 0.0 for w in steps):
        raise ValueError("steps must be positive")
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise ValueError("steps must be strictly increasing")
    curve: list[CurvePoint] = []
    med, iqr = _median_iqr(_eval_model(student, detector, eval_prompts, gen, seed))
    curve.append(CurvePoint(0.0, med, iqr))
    for w in steps:
        merged = merge_counts(student, clean, w)
        med, iqr = _median_iqr(_eval_model(merged, detector, eval_prompts, gen, seed))
        curve.append(CurvePoint(float(w), med, iqr))
    return curve


@dataclass
class DomainRetention:
    """Per-domain detection before and after a single clean merge on domain A."""

    before_a: list[float]
    before_b: list[float]
    after_a: list[float]
    after_b: list[float]

    def medians(self) -> dict:
        return {
            "before_a": float(np.median(self.before_a)),
            "before_b": float(np.median(self.before_b)),
            "after_a": float(np.median(self.after_a)),
            "after_b": float(np.median(self.after_b)),
        }


def domain_retention(
    student: NGramModel,
    clean_domain_a: Corpus,
    weight: float,
    detector: Detector,
    prompts_a: Sequence[TokenSequence],
    prompts_b: Sequence[TokenSequence],
    gen: GenParams,
    seed: int = 0,
) -> DomainRetention:
    """Erode domain A with clean text; measure both domains before and after."""
    if weight <= 0.0:
        raise ValueError("weight must be positive")
    if len(prompts_a) == 0 or len(prompts_b) == 0:
        raise ValueError("both domains need at least one prompt")
    before_a = _eval_model(student, detector, prompts_a, gen, seed)
    before_b = _eval_model(student, detector, prompts_b, gen, derive_seed(seed, 1))
    merged = merge_counts(student, clean_domain_a, weight)
    after_a = _eval_model(merged, detector, prompts_a, gen, seed)
    after_b = _eval_model(merged, detector, prompts_b, gen, derive_seed(seed, 1))
    return DomainRetention(before_a, before_b, after_a, after_b)
