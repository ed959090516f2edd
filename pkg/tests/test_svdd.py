"""Reward-guided search: candidate values, selection rules, the call
budget, and exact equivalence with plain ancestral decoding at M = 1."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import make_counting
from mdmkit.corpus import detokenize
from mdmkit.denoiser import OracleDenoiser
from mdmkit.diffusion import NoisyState
from mdmkit.errors import DomainError
from mdmkit.sampler import DecodeConfig, ancestral_decode, initial_state
from mdmkit.svdd import (
    Candidate,
    SvddConfig,
    select_argmax,
    select_soft,
    svdd_decode,
    value_pma,
)
from mdmkit.verifier import ConstantEmbedder, HashedEmbedder


def _mk_candidate(value, vocab):
    tokens = np.asarray([vocab.sep_id, vocab.id_of("cat")], dtype=np.int64)
    st = NoisyState(tokens=tokens, condition_len=1, t=0.5)
    return Candidate(
        state=st, value=value, x0_fill=st.target_tokens(), sentence="cat"
    )


# ---------------------------------------------------------------------------
# Config and candidate validation
# ---------------------------------------------------------------------------


def test_svdd_config_validation():
    SvddConfig(M=4, selection="soft", alpha=0.1)
    SvddConfig(M=4, selection="argmax")
    with pytest.raises(DomainError):
        SvddConfig(M=0)
    with pytest.raises(DomainError):
        SvddConfig(selection="beam")
    with pytest.raises(DomainError):
        SvddConfig(selection="soft")  # alpha missing
    with pytest.raises(DomainError):
        SvddConfig(selection="soft", alpha=0.0)
    with pytest.raises(DomainError):
        SvddConfig(selection="argmax", alpha=0.5)
    with pytest.raises(DomainError):
        SvddConfig(value_fill="midpoint")


def test_candidate_rejects_nonfinite_value(enum_corpus):
    _, vocab, _, _, _ = enum_corpus
    with pytest.raises(DomainError):
        _mk_candidate(float("nan"), vocab)


def test_candidate_rejects_masked_fill(enum_corpus):
    _, vocab, _, _, _ = enum_corpus
    tokens = np.asarray([vocab.sep_id, vocab.id_of("cat")], dtype=np.int64)
    st = NoisyState(tokens=tokens, condition_len=1, t=0.5)
    with pytest.raises(DomainError):
        Candidate(
            state=st, value=0.5,
            x0_fill=np.asarray([vocab.mask_id]), sentence="",
        )


# ---------------------------------------------------------------------------
# Value estimation
# ---------------------------------------------------------------------------


def test_value_pma_mask_free_state_scores_itself(enum_corpus, enum_condition):
    """With nothing masked the fill is the candidate's own target and the
    value is the cosine between its sentence and the input sentence."""
    _, vocab, _, _, oracle = enum_corpus
    cat, dog = vocab.id_of("cat"), vocab.id_of("dog")
    tokens = np.concatenate([enum_condition, [cat, dog]])
    st = NoisyState(tokens=tokens, condition_len=2, t=0.5)
    emb = HashedEmbedder(dim=16)
    input_emb = emb.embed(["cat dog"])[0]
    value, fill, sentence = value_pma(
        st, oracle, 1.0, enum_condition, emb, input_emb
    )
    assert sentence == "cat dog"
    np.testing.assert_array_equal(fill, [cat, dog])
    assert value == pytest.approx(1.0)


def test_value_pma_argmax_fill_uses_posterior_mode(enum_corpus, enum_condition):
    """Fully masked state under the enumeration posterior: position 0's
    argmax is 'bird' (weights 24/45) and position 1's is 'bird' (18/45)."""
    _, vocab, _, _, oracle = enum_corpus
    st = initial_state(enum_condition, 2, vocab.mask_id)
    emb = HashedEmbedder(dim=16)
    value, fill, sentence = value_pma(
        st, oracle, 1.0, enum_condition, emb, emb.embed(["tree"])[0]
    )
    assert sentence == "bird bird"
    assert np.isfinite(value)


def test_value_pma_constant_embedder_gives_equal_values(enum_corpus, enum_condition):
    _, vocab, _, _, oracle = enum_corpus
    emb = ConstantEmbedder(np.asarray([1.0, 2.0, 3.0]))
    input_emb = emb.embed(["tree"])[0]
    values = set()
    for tgt in ([vocab.mask_id, vocab.mask_id], [vocab.id_of("cat"), vocab.mask_id]):
        st = NoisyState(
            tokens=np.concatenate([enum_condition, tgt]), condition_len=2, t=0.5
        )
        v, _, _ = value_pma(st, oracle, 1.0, enum_condition, emb, input_emb)
        values.add(round(v, 12))
    assert values == {1.0}


def test_value_pma_sample_fill_needs_rng(enum_corpus, enum_condition):
    _, vocab, _, _, oracle = enum_corpus
    st = initial_state(enum_condition, 2, vocab.mask_id)
    emb = HashedEmbedder(dim=8)
    with pytest.raises(DomainError):
        value_pma(
            st, oracle, 1.0, enum_condition, emb, emb.embed(["tree"])[0],
            value_fill="sample_fill",
        )
    v, fill, _ = value_pma(
        st, oracle, 1.0, enum_condition, emb, emb.embed(["tree"])[0],
        value_fill="sample_fill", rng=np.random.default_rng(0),
    )
    assert vocab.mask_id not in fill


# ---------------------------------------------------------------------------
# Selection rules
# ---------------------------------------------------------------------------


def test_select_argmax_ties_lowest_index(enum_corpus):
    _, vocab, _, _, _ = enum_corpus
    cands = [_mk_candidate(v, vocab) for v in (0.3, 0.9, 0.9, 0.1)]
    assert select_argmax(cands) is cands[1]
    with pytest.raises(DomainError):
        select_argmax([])


def test_select_soft_singleton_consumes_no_rng(enum_corpus):
    _, vocab, _, _, _ = enum_corpus
    rng = np.random.default_rng(5)
    before = rng.bit_generator.state
    out = select_soft([_mk_candidate(0.7, vocab)], alpha=0.5, rng=rng)
    assert out.value == 0.7
    assert rng.bit_generator.state == before


def test_select_soft_frequencies(enum_corpus):
    """Two candidates at values 0 and alpha*ln 3 select the better one
    with probability 3/4; check within 3 sigma."""
    _, vocab, _, _, _ = enum_corpus
    alpha = 0.4
    cands = [
        _mk_candidate(0.0, vocab),
        _mk_candidate(alpha * np.log(3.0), vocab),
    ]
    rng = np.random.default_rng(31)
    n = 40000
    hits = sum(select_soft(cands, alpha, rng) is cands[1] for _ in range(n))
    sigma = np.sqrt(n * 0.75 * 0.25)
    assert abs(hits - 0.75 * n) < 3 * sigma


def test_select_soft_alpha_limits(enum_corpus):
    _, vocab, _, _, _ = enum_corpus
    cands = [_mk_candidate(0.0, vocab), _mk_candidate(1.0, vocab)]
    rng = np.random.default_rng(2)
    # tiny alpha: effectively argmax
    assert all(
        select_soft(cands, 1e-6, rng) is cands[1] for _ in range(200)
    )
    # huge alpha: near-uniform; both candidates get picked
    seen = {0: 0, 1: 0}
    for _ in range(400):
        seen[0 if select_soft(cands, 1e6, rng) is cands[0] else 1] += 1
    assert seen[0] > 100 and seen[1] > 100
    with pytest.raises(DomainError):
        select_soft(cands, 0.0, rng)


# ---------------------------------------------------------------------------
# Full search
# ---------------------------------------------------------------------------


def test_svdd_budget_guided_predictions(enum_corpus, enum_condition):
    """T steps with M candidates cost exactly T * (1 + M) denoiser grid
    evaluations at gamma = 1 (each guided prediction is one raw call)."""
    _, _, _, _, oracle = enum_corpus
    counting = make_counting(oracle)
    T, M = 4, 3
    svdd_decode(
        counting, enum_condition,
        DecodeConfig(T=T, target_len=2),
        SvddConfig(M=M, selection="argmax"),
        HashedEmbedder(dim=8),
        np.random.default_rng(0),
    )
    assert counting.calls == T * (1 + M)


def test_svdd_budget_doubles_under_guidance(enum_corpus, enum_condition):
    """At gamma != 1 every guided prediction makes two raw calls."""
    _, _, _, _, oracle = enum_corpus
    counting = make_counting(oracle)
    T, M = 3, 2
    svdd_decode(
        counting, enum_condition,
        DecodeConfig(T=T, target_len=2, gamma=1.4),
        SvddConfig(M=M, selection="argmax"),
        HashedEmbedder(dim=8),
        np.random.default_rng(0),
    )
    assert counting.calls == 2 * T * (1 + M)


def test_svdd_m1_matches_ancestral_bitwise(enum_corpus, enum_condition):
    _, _, _, _, oracle = enum_corpus
    emb = HashedEmbedder(dim=8)
    for seed in range(20):
        plain = ancestral_decode(
            oracle, enum_condition, DecodeConfig(T=3, target_len=2),
            np.random.default_rng(seed),
        )
        searched = svdd_decode(
            oracle, enum_condition,
            DecodeConfig(T=3, target_len=2),
            SvddConfig(M=1, selection="soft", alpha=0.2),
            emb,
            np.random.default_rng(seed),
        )
        np.testing.assert_array_equal(plain, searched)


def test_svdd_argmax_chooses_per_step_maximum(enum_corpus, enum_condition):
    _, vocab, _, _, oracle = enum_corpus
    trace = []
    svdd_decode(
        oracle, enum_condition,
        DecodeConfig(T=4, target_len=2),
        SvddConfig(M=4, selection="argmax"),
        HashedEmbedder(dim=16),
        np.random.default_rng(7),
        on_step=lambda step, t, s, cands, chosen: trace.append((cands, chosen)),
    )
    assert len(trace) == 4
    for cands, chosen in trace:
        values = [c.value for c in cands]
        assert values[chosen] == max(values)
        # lowest-index tie break
        assert chosen == values.index(max(values))


def test_svdd_output_mask_free_and_grid_walks_down(enum_corpus, enum_condition):
    _, vocab, _, _, oracle = enum_corpus
    times = []
    out = svdd_decode(
        oracle, enum_condition,
        DecodeConfig(T=5, target_len=2),
        SvddConfig(M=2, selection="soft", alpha=0.3),
        HashedEmbedder(dim=8),
        np.random.default_rng(3),
        on_step=lambda step, t, s, cands, chosen: times.append((t, s)),
    )
    assert vocab.mask_id not in out
    assert times[0][0] == 1.0 and times[-1][1] == 0.0
    assert all(t > s for t, s in times)


def test_svdd_explicit_input_sentence(enum_corpus, enum_condition):
    """The reward target defaults to the detokenized condition; passing
    the same string explicitly must not change the decode."""
    _, vocab, _, _, oracle = enum_corpus
    emb = HashedEmbedder(dim=8)
    a = svdd_decode(
        oracle, enum_condition, DecodeConfig(T=3, target_len=2),
        SvddConfig(M=3, selection="argmax"), emb, np.random.default_rng(11),
    )
    b = svdd_decode(
        oracle, enum_condition, DecodeConfig(T=3, target_len=2),
        SvddConfig(M=3, selection="argmax"), emb, np.random.default_rng(11),
        input_sentence=detokenize(enum_condition, vocab),
    )
    np.testing.assert_array_equal(a, b)
