"""Shared fixtures: tiny corpora, oracles, small architectures."""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from mdmkit.corpus import PairExample, Vocab, build_vocab, layout
from mdmkit.denoiser import ArchConfig, OracleDenoiser, TinyDenoiser, tiny_init
from mdmkit.diffusion import NoisyState


@pytest.fixture(scope="session")
def enum_corpus():
    """Full-support enumeration corpus: one condition, all length-2 targets
    over three content words, non-uniform weights.

    Full product support matters: the reverse process samples positions
    independently within a step, so it can visit any combination of
    per-position tokens, and the Bayes oracle must never be asked about
    a state outside its corpus.
    """
    words = ("cat", "dog", "bird")
    pairs = [
        PairExample(("tree",), tgt) for tgt in itertools.product(words, repeat=2)
    ]
    vocab = build_vocab(pairs)
    atoms = [layout(p, vocab, max_target_len=2) for p in pairs]
    weights = [float(w) for w in range(1, len(atoms) + 1)]
    oracle = OracleDenoiser(atoms, weights, vocab)
    return pairs, vocab, atoms, np.asarray(weights) / sum(weights), oracle


@pytest.fixture(scope="session")
def enum_condition(enum_corpus):
    _, _, atoms, _, _ = enum_corpus
    return atoms[0].tokens[: atoms[0].condition_len]


@pytest.fixture(scope="session")
def small_arch():
    """Under 5k parameters; big enough to exercise every code path."""
    return ArchConfig(
        vocab_size=11, max_len=9, embed_dim=10, n_layers=2, n_heads=2, ff_dim=16
    )


@pytest.fixture(scope="session")
def small_vocab():
    pairs = [
        PairExample(("cat", "dog"), ("bird", "fish")),
        PairExample(("tree", "stone"), ("river",)),
    ]
    return build_vocab(pairs)  # 4 specials + 7 words = 11 tokens


@pytest.fixture()
def small_net(small_arch, small_vocab):
    params = tiny_init(small_arch, np.random.default_rng(11))
    return TinyDenoiser(small_arch, params, small_vocab)


@pytest.fixture()
def masked_state(small_vocab):
    """Condition 'cat dog <sep>', target [bird, <mask>, <mask>] at t = 0.6."""
    v = small_vocab
    tokens = np.asarray(
        [v.id_of("cat"), v.id_of("dog"), v.sep_id,
         v.id_of("bird"), v.mask_id, v.mask_id],
        dtype=np.int64,
    )
    return NoisyState(tokens=tokens, condition_len=3, t=0.6)


def make_counting(denoiser):
    """Wrap a denoiser so raw grid evaluations can be counted."""

    class Counting:
        def __init__(self, inner):
            self.inner = inner
            self.vocab = inner.vocab
            self.calls = 0

        def predict_grid(self, state):
            self.calls += 1
            return self.inner.predict_grid(state)

    return Counting(denoiser)
