"""Green-list watermark: bias a keyed pseudorandom token subset at each step.

Each step hashes the previous k tokens with a secret key; every vocabulary
entry is independently green with probability gamma under that hash. The
generator adds delta to green log-probabilities before sampling, and the
detector counts greens and reports a one-sided normal z-test.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DetectionReport, context_hash, hash_window, unit_uniform, unit_uniform_array
from .lm import sample_from
from .stats import kgw_z, log10_normal_upper


@dataclass(frozen=True)
class KgwParams:
    key: int
    k: int = 1
    gamma: float = 0.25
    delta: float = 2.0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.delta < 0.0:
            raise ValueError(f"delta must be non-negative, got {self.delta}")


def is_green(window: Sequence[int], token: int, params: KgwParams) -> bool:
    """Whether a token is green under the exact k-token window."""
    state = context_hash(window, params.key)
    return unit_uniform(state, token) < params.gamma


def green_mask(window: Sequence[int], vocab_size: int, params: KgwParams) -> np.ndarray:
    """Boolean green mask over the whole vocabulary for one window."""
    state = context_hash(window, params.key)
    u = unit_uniform_array(state, np.arange(vocab_size))
    return u < params.gamma


def transform(dist: np.ndarray, window: Sequence[int], params: KgwParams) -> np.ndarray:
    """Shift green log-probabilities by delta and renormalize.

    Zero-probability entries stay at zero; the shift never resurrects a
    token the model ruled out.
    """
    mask = green_mask(window, len(dist), params)
    with np.errstate(divide="ignore"):
        logits = np.where(dist > 0.0, np.log(np.maximum(dist, 1e-320)), -np.inf)
    logits = logits + np.where(mask, params.delta, 0.0)
    logits -= logits.max()
    out = np.exp(logits)
    return out / out.sum()


def transform_fn(params: KgwParams):
    """Distribution transform keyed by the full preceding token list."""

    def fn(dist: np.ndarray, prev_tokens: Sequence[int]) -> np.ndarray:
        return transform(dist, hash_window(prev_tokens, params.k), params)

    return fn


def step_fn(params: KgwParams):
    """Step rule for lm.generate: transform, then sample."""

    def step(dist: np.ndarray, prev_tokens: Sequence[int], rng: np.random.Generator) -> int:
        return sample_from(transform(dist, hash_window(prev_tokens, params.k), params), rng)

    return step


def detect(text: Sequence[int], prefix: Sequence[int], params: KgwParams) -> DetectionReport:
    """Count greens over the text and report the z-test in log10.

    The window for token i draws from prefix + text[:i], padded the same way
    generation pads, so generator and detector agree token by token.
    """
    if len(text) == 0:
        raise ValueError("cannot detect on an empty text")
    preceding = list(prefix)
    greens = 0
    for tok in text:
        if is_green(hash_window(preceding, params.k), tok, params):
            greens += 1
        preceding.append(tok)
    total = len(text)
    z = kgw_z(greens, total, params.gamma)
    return DetectionReport(
        method="kgw",
        statistic=z,
        scored_tokens=total,
        log10_p=log10_normal_upper(z),
        greens=greens,
    )
