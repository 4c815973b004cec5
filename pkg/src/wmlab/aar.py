"""Keyed-score watermark: deterministic selection by hashed Gumbel-style draws.

Each step hashes the previous k tokens to seed a vector of uniform scores
r_v in (0, 1), one per vocabulary entry, and emits argmax r_v^(1/p_v).
Selection is computed as argmax log(r_v)/p_v, which is monotone-equivalent
and numerically safe. Detection sums -log(1 - r) over the observed tokens;
under the null that sum is Gamma(n, 1) distributed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DetectionReport, context_hash, hash_window, unit_uniform, unit_uniform_array
from .stats import log10_gamma_upper


@dataclass(frozen=True)
class AarParams:
    key: int
    k: int = 2

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be at least 1")


def scores(window: Sequence[int], vocab_size: int, params: AarParams) -> np.ndarray:
    """Keyed uniform score vector for one window, clamped inside (0, 1)."""
    state = context_hash(window, params.key)
    return unit_uniform_array(state, np.arange(vocab_size))


def select(
    dist: np.ndarray,
    window: Sequence[int],
    params: AarParams,
    r: np.ndarray | None = None,
) -> int:
    """argmax of log(r_v)/p_v over tokens with p_v > 0; ties pick the lowest id.

    The optional r vector lets a test harness inject known scores.
    """
    if r is None:
        r = scores(window, len(dist), params)
    with np.errstate(divide="ignore", invalid="ignore"):
        ranking = np.where(dist > 0.0, np.log(r) / dist, -np.inf)
    if not np.isfinite(ranking).any():
        raise ValueError("selection requires at least one token with positive probability")
    return int(np.argmax(ranking))


def step_fn(params: AarParams):
    """Step rule for lm.generate; ignores the rng, selection is deterministic."""

    def step(dist: np.ndarray, prev_tokens: Sequence[int], rng: np.random.Generator) -> int:
        return select(dist, hash_window(prev_tokens, params.k), params)

    return step


def transform_fn(params: AarParams):
    """Distribution transform for logits distillation: one-hot on the selection."""

    def fn(dist: np.ndarray, prev_tokens: Sequence[int]) -> np.ndarray:
        out = np.zeros_like(dist)
        out[select(dist, hash_window(prev_tokens, params.k), params)] = 1.0
        return out

    return fn


def detect(text: Sequence[int], prefix: Sequence[int], params: AarParams) -> DetectionReport:
    """Sum -log(1 - r) over the text against the Gamma(n, 1) null.

    Score clamping in unit_uniform bounds every term by 64*log(2), so the
    statistic is always finite.
    """
    if len(text) == 0:
        raise ValueError("cannot detect on an empty text")
    preceding = list(prefix)
    total = 0.0
    for tok in text:
        state = context_hash(hash_window(preceding, params.k), params.key)
        r = unit_uniform(state, tok)
        total += -np.log1p(-r)
        preceding.append(tok)
    n = len(text)
    return DetectionReport(
        method="aar",
        statistic=float(total),
        scored_tokens=n,
        log10_p=log10_gamma_upper(float(n), float(total)),
    )
