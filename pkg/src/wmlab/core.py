"""Shared vocabulary, tokenization, corpus I/O, and keyed hashing.

Everything downstream (watermark partitions, pseudorandom scores, per-worker
seeds) derives from one 64-bit mixing function, so the exact bit-level
behaviour here is a compatibility contract: two implementations that agree on
``splitmix64`` agree on every watermark decision.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

# Reserved token ids, fixed for every vocabulary.
BOS = 0
EOS = 1
UNK = 2
CTXPAD = 3

RESERVED_TOKENS = ("<bos>", "<eos>", "<unk>", "<ctxpad>")

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Unit-interval scores are clamped so log(u) and log(1-u) stay finite.
# 1 - 2**-64 is not representable in float64; the largest double below 1.0
# serves as the upper clamp and keeps -log(1-u) <= 64*log(2).
UNIT_LO = 2.0**-64
UNIT_HI = float.fromhex("0x1.fffffffffffffp-1")

TokenSequence = list[int]


def splitmix64(z: int) -> int:
    """Advance-and-finalize step of splitmix64, modulo 2**64.

    splitmix64(0) == 0xE220A8397B1DCDAF, the well-known first output of the
    generator seeded with zero.
    """
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def splitmix64_array(z: np.ndarray) -> np.ndarray:
    """Vectorized twin of splitmix64 on uint64 arrays (wrap-around intended)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def derive_seed(master: int, index: int) -> int:
    """Deterministic per-item child seed: splitmix64(master XOR index)."""
    if index < 0:
        raise ValueError("index must be non-negative")
    return splitmix64((master ^ index) & _MASK64)


def context_hash(context: Sequence[int], key: int) -> int:
    """Chain splitmix64 over the window, oldest token first, starting at key."""
    s = key & _MASK64
    for t in context:
        s = splitmix64(s ^ (t & _MASK64))
    return s


def hash_window(prev_tokens: Sequence[int], k: int) -> tuple[int, ...]:
    """Last k tokens before the current position, left-padded with CTXPAD."""
    if k < 0:
        raise ValueError("window size must be non-negative")
    if k == 0:
        return ()
    w = tuple(prev_tokens[-k:]) if prev_tokens else ()
    if len(w) < k:
        w = (CTXPAD,) * (k - len(w)) + w
    return w


def unit_uniform(state: int, item: int) -> float:
    """Keyed uniform score in (0, 1) for one item under a hashed state.

    The raw draw is splitmix64(state XOR ((item+1) * golden)) / 2**64, then
    clamped into [UNIT_LO, UNIT_HI].
    """
    mixed = (state ^ (((item + 1) * _GOLDEN) & _MASK64)) & _MASK64
    u = splitmix64(mixed) / 2.0**64
    return min(max(u, UNIT_LO), UNIT_HI)


def unit_uniform_array(state: int, items: np.ndarray) -> np.ndarray:
    """Vectorized unit_uniform over an int array of items."""
    items = np.asarray(items, dtype=np.uint64)
    with np.errstate(over="ignore"):
        mixed = np.uint64(state & _MASK64) ^ ((items + np.uint64(1)) * np.uint64(_GOLDEN))
    u = splitmix64_array(mixed).astype(np.float64) * 2.0**-64
    return np.clip(u, UNIT_LO, UNIT_HI)


_PIECE_RE = re.compile(r"\w+|[^\w\s]+")


@dataclass
class Vocabulary:
    """Token table. Ids 0..3 are the reserved BOS/EOS/UNK/CTXPAD entries."""

    entries: list[str]
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.entries) < len(RESERVED_TOKENS):
            raise ValueError("vocabulary must contain the four reserved tokens")
        if tuple(self.entries[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise ValueError(f"vocabulary must start with {RESERVED_TOKENS}")
        self._index = {}
        for i, tok in enumerate(self.entries):
            if tok in self._index:
                raise ValueError(f"duplicate vocabulary entry {tok!r}")
            self._index[tok] = i

    @classmethod
    def from_words(cls, words: Sequence[str]) -> "Vocabulary":
        """Build a vocabulary from plain words, prepending the reserved ids."""
        return cls(list(RESERVED_TOKENS) + list(words))

    @property
    def size(self) -> int:
        return len(self.entries)

    def id(self, token: str) -> int:
        return self._index.get(token, UNK)

    def token(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.entries):
            raise ValueError(f"token id {token_id} out of range")
        return self.entries[token_id]

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.entries) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln != ""])


def tokenize(text: str, vocab: Vocabulary) -> TokenSequence:
    """Split on whitespace and punctuation boundaries, map to ids (UNK fallback)."""
    return [vocab.id(piece) for piece in _PIECE_RE.findall(text)]


def detokenize(tokens: Sequence[int], vocab: Vocabulary) -> str:
    """Join token strings with single spaces (inverse of tokenize up to spacing)."""
    return " ".join(vocab.token(t) for t in tokens)


def validate_tokens(seq: Sequence[int], vocab_size: int) -> None:
    for t in seq:
        if not 0 <= t < vocab_size:
            raise ValueError(f"token id {t} outside vocabulary of size {vocab_size}")


@dataclass
class Corpus:
    """A list of token sequences with optional per-sequence tags."""

    sequences: list[TokenSequence]
    tags: list[str | None] | None = None

    def __post_init__(self) -> None:
        if self.tags is not None and len(self.tags) != len(self.sequences):
            raise ValueError("tags must be parallel to sequences")

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self) -> Iterator[TokenSequence]:
        return iter(self.sequences)

    def tag_of(self, i: int) -> str | None:
        return self.tags[i] if self.tags is not None else None

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, seq in enumerate(self.sequences):
                rec: dict = {"tokens": list(seq)}
                tag = self.tag_of(i)
                if tag is not None:
                    rec["tag"] = tag
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Corpus":
        seqs: list[TokenSequence] = []
        tags: list[str | None] = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                seqs.append([int(t) for t in rec["tokens"]])
                tags.append(rec.get("tag"))
        if all(t is None for t in tags):
            return cls(seqs)
        return cls(seqs, tags)


@dataclass
class DetectionReport:
    """Universal detector output: statistic, scored length, log10 p-value."""

    method: str
    statistic: float
    scored_tokens: int
    log10_p: float
    greens: int | None = None

    def to_dict(self) -> dict:
        if self.method == "kgw":
            return {
                "method": "kgw",
                "z": self.statistic,
                "T": self.scored_tokens,
                "greens": self.greens,
                "log10_p": self.log10_p,
            }
        if self.method == "aar":
            return {
                "method": "aar",
                "S": self.statistic,
                "n": self.scored_tokens,
                "log10_p": self.log10_p,
            }
        return {
            "method": self.method,
            "statistic": self.statistic,
            "scored_tokens": self.scored_tokens,
            "log10_p": self.log10_p,
        }
