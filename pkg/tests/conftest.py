"""Shared fixtures: synthetic corpora, trained models, and distilled students.

Everything here is deterministic. Session-scoped fixtures are built lazily,
so running a single module only pays for what that module asks for.
"""

from __future__ import annotations

import numpy as np
import pytest

from wmlab import aar, kgw
from wmlab.backdoor import BackdoorSpec, build_backdoor_corpus
from wmlab.core import Corpus, Vocabulary
from wmlab.distill import distill_sampling
from wmlab.lm import NGramModel, train_ngram

# Token ids for the shared 1008-entry vocabulary (4 reserved + 1000 words
# + the backdoor trigger/target words).
TRIGGER_IDS = (1004,)
TARGET_IDS = (1005, 1006, 1007)

KGW_KEY = 11
AAR_KEY = 6

# One line per acceptance criterion, echoed after the run so the verdicts
# survive pytest's capture of per-test stdout.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_nature_corpus(
    vocab_size: int,
    n_seqs: int,
    seq_len: int,
    seed: int,
    lo: int = 4,
    hi: int | None = None,
    branch: int = 12,
    conc: float = 0.8,
) -> Corpus:
    """Sparse first-order Markov 'nature' text over token ids [lo, hi).

    Each token gets `branch` successors with Dirichlet(conc) weights, so the
    ground truth has the skewed, sparse shape real text statistics do while
    staying cheap to sample.
    """
    hi = vocab_size if hi is None else hi
    rng = np.random.default_rng(seed)
    tokens = np.arange(lo, hi)
    successors: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for t in tokens:
        nxt = rng.choice(tokens, size=min(branch, len(tokens)), replace=False)
        weights = rng.dirichlet(np.ones(len(nxt)) * conc)
        successors[int(t)] = (nxt, weights)
    seqs = []
    for _ in range(n_seqs):
        cur = int(rng.choice(tokens))
        seq = [cur]
        for _ in range(seq_len - 1):
            nxt, weights = successors[cur]
            cur = int(rng.choice(nxt, p=weights))
            seq.append(cur)
        seqs.append(seq)
    return Corpus(seqs)


@pytest.fixture(scope="session")
def demo_vocab() -> Vocabulary:
    words = [f"w{i:03d}" for i in range(1000)] + ["@@@", "I", "am", "llama"]
    return Vocabulary.from_words(words)


@pytest.fixture(scope="session")
def base_model(demo_vocab) -> NGramModel:
    """Order-4 smoothed model over the word range; the 'real LM' stand-in."""
    corpus = make_nature_corpus(demo_vocab.size, 6000, 32, seed=17, hi=1004)
    return train_ngram(corpus, 4, demo_vocab.size)


@pytest.fixture(scope="session")
def held_prompts(demo_vocab) -> list[list[int]]:
    """1000 distinct 4-token prompts from held-out nature text."""
    held = make_nature_corpus(demo_vocab.size, 1400, 8, seed=18, hi=1004)
    seen: set[tuple[int, ...]] = set()
    prompts: list[list[int]] = []
    for seq in held:
        head = tuple(seq[:4])
        if head not in seen:
            seen.add(head)
            prompts.append(list(head))
    assert len(prompts) >= 1000
    return prompts[:1000]


@pytest.fixture(scope="session")
def teacher_model(demo_vocab) -> NGramModel:
    """Order-2 zero-smoothing teacher; support stays on nature transitions."""
    corpus = make_nature_corpus(demo_vocab.size, 2500, 40, seed=41, hi=1004)
    return train_ngram(corpus, 2, demo_vocab.size, (0.0, 0.0))


@pytest.fixture(scope="session")
def kgw_student(teacher_model) -> NGramModel:
    """Sampling-distilled student carrying the KGW watermark."""
    params = kgw.KgwParams(key=KGW_KEY)
    return distill_sampling(teacher_model, kgw.step_fn(params), 2, 2000, 40, seed=100)


@pytest.fixture(scope="session")
def quality_model() -> NGramModel:
    """Small skewed-successor model where quality metrics have contrast."""
    corpus = make_nature_corpus(68, 800, 30, seed=5, conc=0.3)
    return train_ngram(corpus, 2, 68)


@pytest.fixture(scope="session")
def quality_prompts() -> list[list[int]]:
    corpus = make_nature_corpus(68, 800, 30, seed=5, conc=0.3)
    return [list(seq[:2]) for seq in corpus.sequences[:100]]


@pytest.fixture(scope="session")
def backdoor_setup(demo_vocab):
    """Clean corpus, its model, and a 1%-poisoned sibling model."""
    clean = make_nature_corpus(demo_vocab.size, 20000, 25, seed=61, hi=1004)
    spec = BackdoorSpec(trigger=TRIGGER_IDS, target=TARGET_IDS, mode="pt", n=200)
    poisoned = build_backdoor_corpus(clean, spec, seed=7)
    clean_model = train_ngram(clean, 4, demo_vocab.size)
    backdoored_model = train_ngram(poisoned, 4, demo_vocab.size)
    return {
        "clean_corpus": clean,
        "spec": spec,
        "clean_model": clean_model,
        "backdoored_model": backdoored_model,
    }
