"""Text-quality metrics and the infringement decision procedure."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import Corpus, DetectionReport, TokenSequence
from .lm import NGramModel, log_score
from .stats import ip_z

Detector = Callable[[Sequence[int], Sequence[int]], DetectionReport]


def perplexity(
    scorer: NGramModel,
    corpus: Corpus,
    no_repeat_n: int | None = None,
) -> float:
    """exp of the mean per-token NLL under the scorer.

    With no_repeat_n set, tokens completing an n-gram already seen earlier
    in the same sequence are excluded from the average, which keeps
    degenerate repetition loops from flattering the score.
    """
    if len(corpus) == 0:
        raise ValueError("perplexity needs a non-empty corpus")
    if no_repeat_n is not None and no_repeat_n < 1:
        raise ValueError("no_repeat_n must be at least 1")
    total = 0.0
    count = 0
    for seq in corpus:
        if not seq:
            continue
        nll, _ = log_score(scorer, seq)
        if no_repeat_n is None:
            total += math.fsum(nll)
            count += len(nll)
            continue
        seen: set[tuple[int, ...]] = set()
        for i in range(len(seq)):
            if i + 1 >= no_repeat_n:
                gram = tuple(seq[i + 1 - no_repeat_n : i + 1])
                if gram in seen:
                    continue
                seen.add(gram)
            total += nll[i]
            count += 1
    if count == 0:
        raise ValueError("no scorable tokens in corpus")
    return math.exp(total / count)


def seq_rep_n(sequences: Sequence[TokenSequence], n: int = 3) -> float:
    """Mean over sequences of 1 - distinct/total n-grams (repetition fraction)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    reps: list[float] = []
    for seq in sequences:
        total = len(seq) - n + 1
        if total < 1:
            continue
        grams = {tuple(seq[i : i + n]) for i in range(total)}
        reps.append(1.0 - len(grams) / total)
    if not reps:
        raise ValueError(f"no sequence of length >= {n}")
    return float(np.mean(reps))


@dataclass
class AccuracyReport:
    accuracy: float
    tpr: float
    fpr: float
    n_watermarked: int
    n_human: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "tpr": self.tpr,
            "fpr": self.fpr,
            "n_watermarked": self.n_watermarked,
            "n_human": self.n_human,
        }


def detection_accuracy(
    wm_reports: Sequence[DetectionReport],
    human_reports: Sequence[DetectionReport],
    alpha: float = 0.05,
) -> AccuracyReport:
    """Classify reports at threshold alpha; a text is flagged when p < alpha."""
    if len(wm_reports) == 0 or len(human_reports) == 0:
        raise ValueError("both report lists must be non-empty")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    log_alpha = math.log10(alpha)
    tp = sum(1 for r in wm_reports if r.log10_p < log_alpha)
    fp = sum(1 for r in human_reports if r.log10_p < log_alpha)
    n_wm = len(wm_reports)
    n_hu = len(human_reports)
    return AccuracyReport(
        accuracy=(tp + (n_hu - fp)) / (n_wm + n_hu),
        tpr=tp / n_wm,
        fpr=fp / n_hu,
        n_watermarked=n_wm,
        n_human=n_hu,
    )


# Report bands: strong evidence below 1e-3, a gray zone up to 0.05, none above.
BAND_SIGNIFICANT = "significant"
BAND_POSSIBLE = "possible"
BAND_NONE = "none"

_LOG10_STRONG = -3.0
_LOG10_WEAK = math.log10(0.05)


def evidence_band(log10_p: float) -> str:
    """Bucket a log10 p-value into the three-way report convention."""
    if log10_p < _LOG10_STRONG:
        return BAND_SIGNIFICANT
    if log10_p < _LOG10_WEAK:
        return BAND_POSSIBLE
    return BAND_NONE


@dataclass
class IpReport:
    """Outcome of the two-sample infringement test."""

    accuracy: float
    z: float
    log10_p: float
    verdict: bool
    band: str
    n_per_class: int
    alpha: float
    boundary: float

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "z": self.z,
            "log10_p": self.log10_p,
            "verdict": self.verdict,
            "band": self.band,
            "n_per_class": self.n_per_class,
            "alpha": self.alpha,
            "boundary": self.boundary,
        }


def ip_infringement_test(
    detector: Detector,
    model_texts: Sequence[TokenSequence],
    human_texts: Sequence[TokenSequence],
    alpha: float = 0.05,
    boundary: float = 0.05,
) -> IpReport:
    """Decide whether a suspect model's text carries the key's watermark.

    Each of the N + N texts gets a per-text p-value; classification accuracy
    at alpha is then tested against chance plus the boundary margin. The
    verdict is positive when the accuracy z-test lands below p = 0.05.
    """
    n = len(model_texts)
    if n != len(human_texts):
        raise ValueError(f"class counts must match, got {n} and {len(human_texts)}")
    if n < 10:
        raise ValueError(f"need at least 10 texts per class, got {n}")
    wm_reports = [detector(t, []) for t in model_texts]
    hu_reports = [detector(t, []) for t in human_texts]
    acc = detection_accuracy(wm_reports, hu_reports, alpha)
    z, log10_p = ip_z(acc.accuracy, n, boundary)
    return IpReport(
        accuracy=acc.accuracy,
        z=z,
        log10_p=log10_p,
        verdict=log10_p < _LOG10_WEAK,
        band=evidence_band(log10_p),
        n_per_class=n,
        alpha=alpha,
        boundary=boundary,
    )
