"""Shared fixtures: deterministic toy vocabularies and corpora."""

from __future__ import annotations

import numpy as np
import pytest

from projdiff.core import Corpus, Sequence, Vocabulary


def make_vocab(n_data: int, with_mask: bool = True) -> Vocabulary:
    """Single-letter data tokens, optionally followed by a MASK token."""
    letters = "abcdefghijklmnop"
    tokens = tuple(letters[:n_data]) + (("[MASK]",) if with_mask else ())
    return Vocabulary(tokens, mask_id=n_data if with_mask else None)


def make_corpus(
    vocab: Vocabulary,
    length: int,
    n_entries: int,
    seed: int = 0,
    weights: bool = True,
) -> Corpus:
    """Random distinct data-token sequences with integer weights."""
    rng = np.random.default_rng(seed)
    n_data = vocab.size - (1 if vocab.mask_id is not None else 0)
    seen: set[tuple[int, ...]] = set()
    entries = []
    while len(entries) < n_entries:
        ids = tuple(int(v) for v in rng.integers(0, n_data, size=length))
        if ids in seen:
            continue
        seen.add(ids)
        w = float(rng.integers(1, 4)) if weights else 1.0
        entries.append((Sequence(ids), w))
    return Corpus(vocab, entries)


@pytest.fixture
def toy_vocab() -> Vocabulary:
    return make_vocab(4)


@pytest.fixture
def toy_corpus(toy_vocab) -> Corpus:
    return make_corpus(toy_vocab, length=5, n_entries=8, seed=11)


@pytest.fixture
def tiny_corpus() -> Corpus:
    """Two entries over {a, b, MASK}; small enough to verify by hand."""
    vocab = Vocabulary(("a", "b", "[MASK]"), mask_id=2)
    return Corpus(vocab, [(Sequence((0, 1)), 2.0), (Sequence((1, 1)), 1.0)])
