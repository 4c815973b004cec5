"""Count-based n-gram language model with interpolated additive smoothing.

The model stores real-valued counts for every context length 0..order-1,
so fractional counts from distillation and weighted merges from continual
training are first-class citizens. Conditionals interpolate each maximum
likelihood level with the next shorter one:

    P_j(t | c) = (1 - lam) * (count(c, t) + alpha) / (count(c, .) + alpha*V)
                 + lam * P_{j-1}(t | c[1:])

with the base case the uniform distribution 1/V. A level whose denominator
is zero (alpha = 0 and unseen context) falls through to the shorter level.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import BOS, EOS, Corpus, TokenSequence

Counts = dict[tuple[int, ...], dict[int, float]]

# A step rule picks the next token from the model's (already tempered)
# distribution given the full preceding token list.
StepRule = Callable[[np.ndarray, Sequence[int], np.random.Generator], int]


@dataclass
class GenParams:
    """Generation controls. Output is fully determined by these plus the model."""

    max_len: int
    temperature: float = 1.0
    stop_at_eos: bool = True
    seed: int = 0


class NGramModel:
    """Interpolated additive-smoothing n-gram model over a fixed vocabulary."""

    def __init__(
        self,
        order: int,
        vocab_size: int,
        counts: Counts | None = None,
        alpha: float = 0.1,
        lam: float = 0.3,
    ) -> None:
        if order < 1:
            raise ValueError("order must be at least 1")
        if vocab_size < 1:
            raise ValueError("vocab size must be at least 1")
        if alpha < 0.0:
            raise ValueError("alpha must be non-negative")
        if not 0.0 <= lam < 1.0:
            raise ValueError("lambda must lie in [0, 1)")
        self.order = order
        self.vocab_size = vocab_size
        self.alpha = alpha
        self.lam = lam
        self.counts: Counts = counts if counts is not None else {}
        self._totals: dict[tuple[int, ...], float] = {
            ctx: sum(d.values()) for ctx, d in self.counts.items()
        }

    def copy(self) -> "NGramModel":
        counts = {ctx: dict(d) for ctx, d in self.counts.items()}
        return NGramModel(self.order, self.vocab_size, counts, self.alpha, self.lam)

    def total_mass(self) -> float:
        """Sum of top-level counts (the number of weighted training events)."""
        top = self.order - 1
        return sum(t for ctx, t in self._totals.items() if len(ctx) == top)

    def _bump(self, ctx: tuple[int, ...], token: int, amount: float) -> None:
        d = self.counts.get(ctx)
        if d is None:
            d = {}
            self.counts[ctx] = d
        d[token] = d.get(token, 0.0) + amount
        self._totals[ctx] = self._totals.get(ctx, 0.0) + amount

    def padded_context(self, context: Sequence[int]) -> tuple[int, ...]:
        """Last order-1 tokens, left-padded with BOS."""
        w = self.order - 1
        if w == 0:
            return ()
        ctx = tuple(context[-w:]) if context else ()
        if len(ctx) < w:
            ctx = (BOS,) * (w - len(ctx)) + ctx
        return ctx

    def next_dist(self, context: Sequence[int]) -> np.ndarray:
        """Next-token distribution after the given context (length V, sums to 1)."""
        v = self.vocab_size
        ctx = self.padded_context(context)
        dist = np.full(v, 1.0 / v)
        av = self.alpha * v
        for j in range(self.order):
            c = ctx[len(ctx) - j :] if j > 0 else ()
            total = self._totals.get(c, 0.0)
            denom = total + av
            if denom <= 0.0:
                continue  # unseen context with alpha=0: fall through
            level = np.full(v, self.alpha / denom)
            seen = self.counts.get(c)
            if seen:
                idx = np.fromiter(seen.keys(), dtype=np.intp, count=len(seen))
                val = np.fromiter(seen.values(), dtype=np.float64, count=len(seen))
                level[idx] += val / denom
            dist = (1.0 - self.lam) * level + self.lam * dist
        return dist


def _events(seq: Sequence[int], order: int):
    """(context, next) pairs with BOS padding at the start and EOS appended."""
    w = order - 1
    padded = (BOS,) * w + tuple(seq) + (EOS,)
    for i in range(len(seq) + 1):
        yield padded[i : i + w], padded[i + w]


def _extract_counts(corpus: Corpus, order: int) -> Counts:
    """Top-level counting followed by exact marginalization to shorter levels."""
    top: Counts = {}
    for seq in corpus:
        for ctx, nxt in _events(seq, order):
            d = top.get(ctx)
            if d is None:
                d = {}
                top[ctx] = d
            d[nxt] = d.get(nxt, 0.0) + 1.0
    return _finalize_levels(top, order)


def _finalize_levels(top: Counts, order: int) -> Counts:
    # Shorter contexts are exact marginals of the top level because BOS
    # padding gives every position a full-width context.
    counts: Counts = dict(top)
    current = top
    for length in range(order - 2, -1, -1):
        lower: Counts = {}
        for ctx, d in current.items():
            short = ctx[1:] if len(ctx) > length else ctx
            acc = lower.get(short)
            if acc is None:
                acc = {}
                lower[short] = acc
            for tok, cnt in d.items():
                acc[tok] = acc.get(tok, 0.0) + cnt
        counts.update(lower)
        current = lower
    return counts


def train_ngram(
    corpus: Corpus,
    order: int,
    vocab_size: int,
    smoothing: tuple[float, float] = (0.1, 0.3),
) -> NGramModel:
    """Count an n-gram model of the given order from a corpus."""
    if len(corpus) == 0:
        raise ValueError("training requires a non-empty corpus")
    alpha, lam = smoothing
    counts = _extract_counts(corpus, order)
    return NGramModel(order, vocab_size, counts, alpha, lam)


def merge_counts(model: NGramModel, new_corpus: Corpus, weight: float) -> NGramModel:
    """Continual training: add weight-scaled counts of a corpus to a copy."""
    if weight <= 0.0:
        raise ValueError("weight must be positive")
    if len(new_corpus) == 0:
        raise ValueError("merge requires a non-empty corpus")
    merged = model.copy()
    fresh = _extract_counts(new_corpus, model.order)
    for ctx, d in fresh.items():
        for tok, cnt in d.items():
            merged._bump(ctx, tok, weight * cnt)
    return merged


def apply_temperature(dist: np.ndarray, temperature: float) -> np.ndarray:
    """Rescale a distribution as p^(1/T), computed stably in log space."""
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    if temperature == 1.0:
        return dist
    with np.errstate(divide="ignore"):
        logp = np.where(dist > 0.0, np.log(np.maximum(dist, 1e-320)), -np.inf)
    logp = logp / temperature
    logp -= logp.max()
    out = np.exp(logp)
    return out / out.sum()


def sample_from(dist: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF sampling; explicit so the draw stream is reproducible."""
    u = rng.random()
    cdf = np.cumsum(dist)
    tok = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(tok, len(dist) - 1)


def plain_step(dist: np.ndarray, context: Sequence[int], rng: np.random.Generator) -> int:
    return sample_from(dist, rng)


def generate(
    model,
    prompt: Sequence[int],
    params: GenParams,
    sampler: StepRule | None = None,
) -> TokenSequence:
    """Generate up to max_len tokens after the prompt.

    The model only needs a next_dist(context) method and a vocab_size, so
    remote bridge models slot in unchanged. The sampler sees the model's
    tempered distribution plus the full preceding token list.
    """
    if params.max_len < 1:
        raise ValueError("max_len must be at least 1")
    step = sampler if sampler is not None else plain_step
    rng = np.random.default_rng(params.seed)
    context: list[int] = list(prompt)
    out: list[int] = []
    for _ in range(params.max_len):
        dist = model.next_dist(context)
        dist = apply_temperature(dist, params.temperature)
        tok = step(dist, context, rng)
        out.append(tok)
        context.append(tok)
        if params.stop_at_eos and tok == EOS:
            break
    return out


def log_score(model: NGramModel, seq: Sequence[int]) -> tuple[list[float], float]:
    """Per-token negative log-likelihoods and their sum under the model."""
    nll: list[float] = []
    for i in range(len(seq)):
        dist = model.next_dist(seq[:i])
        p = float(dist[seq[i]])
        if p <= 0.0:
            raise ValueError(f"token at position {i} has zero probability")
        nll.append(-math.log(p))
    return nll, math.fsum(nll)


MODEL_FORMAT_VERSION = 1


def save_model(model: NGramModel, path: str | Path) -> None:
    """Serialize to JSON lines: header, then one sorted line per context."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "order": model.order,
            "V": model.vocab_size,
            "alpha": model.alpha,
            "lambda": model.lam,
            "version": MODEL_FORMAT_VERSION,
        }
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for ctx in sorted(model.counts.keys()):
            d = model.counts[ctx]
            pairs = [[tok, float(cnt)] for tok, cnt in sorted(d.items())]
            line = {"ctx": list(ctx), "counts": pairs}
            fh.write(json.dumps(line, separators=(",", ":")) + "\n")


def load_model(path: str | Path) -> NGramModel:
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise ValueError("model file is empty")
        header = json.loads(header_line)
        if header.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {header.get('version')!r}")
        counts: Counts = {}
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            ctx = tuple(int(t) for t in rec["ctx"])
            counts[ctx] = {int(tok): float(cnt) for tok, cnt in rec["counts"]}
    return NGramModel(
        int(header["order"]),
        int(header["V"]),
        counts,
        float(header["alpha"]),
        float(header["lambda"]),
    )
