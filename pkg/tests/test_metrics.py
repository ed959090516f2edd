"""Text metrics pinned to hand computations, plus their structural
invariants (range, reference-order invariance, degenerate conventions)."""

from __future__ import annotations

import math

import numpy as np
import pytest

from mdmkit.errors import DomainError
from mdmkit.metrics import (
    EvalReport,
    aggregate_runs,
    bleu,
    exact_match,
    rouge_l,
    rouge_l_corpus,
    sari,
)

# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------


def test_bleu_identity_is_100():
    cands = [["a", "b", "c"], ["x", "y"]]
    refs = [[["a", "b", "c"]], [["x", "y"]]]
    assert bleu(cands, refs) == pytest.approx(100.0)


def test_bleu_disjoint_is_0():
    assert bleu([["a", "b"]], [[["x", "y"]]]) == 0.0


def test_bleu_hand_value():
    """Candidate 'the cat sat' vs reference 'the cat sat down': all
    clipped precisions 1 up to the clamped max order 3, brevity penalty
    exp(1 - 4/3); total 100 * exp(-1/3)."""
    score = bleu([["the", "cat", "sat"]], [[["the", "cat", "sat", "down"]]])
    assert score == pytest.approx(100.0 * math.exp(-1 / 3), abs=1e-10)
    assert score == pytest.approx(71.65313105737893)


def test_bleu_clips_repeated_ngrams():
    """'the the the' vs 'the cat': unigram precision clips at the
    reference count 1/3; candidate length 3 clamps max_n, bigram and
    trigram precision are 0, so the whole score is 0."""
    assert bleu([["the", "the", "the"]], [[["the", "cat"]]]) == 0.0


def test_bleu_brevity_ref_tie_prefers_shorter():
    """Candidate length 3, references of lengths 2 and 4 are equally
    close; the shorter one wins, so BP = 1 (r < c) rather than < 1."""
    cand = [["a", "b", "c"]]
    refs = [[["a", "b"], ["a", "b", "c", "c"]]]
    with_tie = bleu(cand, refs)
    only_longer = bleu(cand, [[["a", "b", "c", "c"]]])
    assert with_tie > only_longer


def test_bleu_reference_order_invariant():
    cand = [["a", "b", "c"]]
    refs_a = [[["a", "b"], ["b", "c", "x"]]]
    refs_b = [[["b", "c", "x"], ["a", "b"]]]
    assert bleu(cand, refs_a) == bleu(cand, refs_b)


def test_bleu_corpus_pools_statistics():
    """Corpus BLEU pools n-gram counts over items; it is not the mean of
    per-item scores."""
    cands = [["a", "b"], ["x", "y"]]
    refs = [[["a", "b"]], [["x", "z"]]]
    pooled = bleu(cands, refs)
    per_item = (bleu(cands[:1], refs[:1]) + bleu(cands[1:], refs[1:])) / 2
    assert pooled != pytest.approx(per_item)
    assert 0 < pooled < 100


def test_bleu_validation():
    with pytest.raises(DomainError):
        bleu([["a"]], [])
    with pytest.raises(DomainError):
        bleu([["a"]], [[]])
    with pytest.raises(DomainError):
        bleu([], [])
    with pytest.raises(DomainError):
        bleu([["a"]], [[["a"]]], max_n=0)


def test_bleu_empty_candidate_scores_zero():
    assert bleu([[]], [[["a"]]]) == 0.0


# ---------------------------------------------------------------------------
# ROUGE-L
# ---------------------------------------------------------------------------


def test_rouge_identity_and_disjoint():
    assert rouge_l(["a", "b"], [["a", "b"]]) == pytest.approx(100.0)
    assert rouge_l(["a", "b"], [["x", "y"]]) == 0.0


def test_rouge_hand_value():
    """Candidate [a,b,c] vs reference [a,c]: LCS 2, P 2/3, R 1; the
    recall-weighted F with beta 1.2 is 2.44*P*R / (R + 1.44*P)."""
    p, r, b2 = 2 / 3, 1.0, 1.2 * 1.2
    expected = 100 * (1 + b2) * p * r / (r + b2 * p)
    assert rouge_l(["a", "b", "c"], [["a", "c"]]) == pytest.approx(expected)
    assert expected == pytest.approx(82.99319727891157)


def test_rouge_lcs_is_not_contiguous():
    # LCS of [a,x,b,y,c] and [a,b,c] is the scattered [a,b,c]
    score = rouge_l(["a", "x", "b", "y", "c"], [["a", "b", "c"]])
    p, r, b2 = 3 / 5, 1.0, 1.44
    assert score == pytest.approx(100 * (1 + b2) * p * r / (r + b2 * p))


def test_rouge_best_reference_wins():
    refs = [["x", "y"], ["a", "b", "c"]]
    assert rouge_l(["a", "b", "c"], refs) == pytest.approx(100.0)
    assert rouge_l(["a", "b", "c"], refs[::-1]) == pytest.approx(100.0)


def test_rouge_corpus_is_mean():
    cands = [["a", "b"], ["x"]]
    refs = [[["a", "b"]], [["y"]]]
    assert rouge_l_corpus(cands, refs) == pytest.approx(
        (rouge_l(cands[0], refs[0]) + rouge_l(cands[1], refs[1])) / 2
    )


def test_rouge_needs_reference():
    with pytest.raises(DomainError):
        rouge_l(["a"], [])


# ---------------------------------------------------------------------------
# SARI
# ---------------------------------------------------------------------------


def test_sari_identity_convention():
    """Candidate = source = reference: keep is perfect at every order
    (100 by the identical-triple convention), add and delete are empty
    (0), so the score is 100/3."""
    src = [["a", "b", "c"]]
    score = sari(src, src, [[["a", "b", "c"]]])
    assert score == pytest.approx(100.0 / 3.0)


def test_sari_deletion_hand_value():
    """Source [a,b,c], candidate = reference = [a,b]: per order keep F1
    is 1, 1, 0, 0; delete precision is 1, 1, 1, 0; add is always 0.
    Mean over orders of the component averages: (2/3+2/3+1/3+0)/4."""
    score = sari([["a", "b", "c"]], [["a", "b"]], [[["a", "b"]]])
    assert score == pytest.approx(100 * 5 / 12)
    assert score == pytest.approx(41.66666666666667)


def test_sari_empty_candidate_below_identity_when_ref_keeps_source():
    src = [["a", "b", "c"]]
    ref = [[["a", "b", "c"]]]
    empty = sari(src, [[]], ref)
    identity = sari(src, src, ref)
    assert empty < identity
    assert empty == 0.0


def test_sari_duplicate_reference_invariance():
    src = [["a", "b", "c"]]
    cand = [["a", "b", "d"]]
    once = sari(src, cand, [[["a", "d"]]])
    thrice = sari(src, cand, [[["a", "d"], ["a", "d"], ["a", "d"]]])
    assert once == pytest.approx(thrice)


def test_sari_rewards_correct_addition():
    """Adding the word the references add must beat not adding it."""
    src = [["a", "b"]]
    ref = [[["a", "b", "z"]]]
    with_add = sari(src, [["a", "b", "z"]], ref)
    without = sari(src, [["a", "b"]], ref)
    assert with_add > without


def test_sari_alignment_validation():
    with pytest.raises(DomainError):
        sari([["a"]], [["a"], ["b"]], [[["a"]], [["b"]]])
    with pytest.raises(DomainError):
        sari([["a"]], [["a"]], [[]])


def test_sari_corpus_is_mean_over_instances():
    srcs = [["a", "b", "c"], ["a", "b", "c"]]
    cands = [["a", "b", "c"], ["a", "b"]]
    refs = [[["a", "b", "c"]], [["a", "b"]]]
    combined = sari(srcs, cands, refs)
    first = sari(srcs[:1], cands[:1], refs[:1])
    second = sari(srcs[1:], cands[1:], refs[1:])
    assert combined == pytest.approx((first + second) / 2)


# ---------------------------------------------------------------------------
# Exact match and aggregation
# ---------------------------------------------------------------------------


def test_exact_match_percent():
    cands = [["a"], ["b"], ["c"], ["d"]]
    refs = [[["a"]], [["x"], ["b"]], [["y"]], [["z"]]]
    assert exact_match(cands, refs) == pytest.approx(50.0)


def test_aggregate_hand_values():
    rep = aggregate_runs({"bleu": [0.0, 10.0], "rouge_l": [10.0, 10.0]})
    assert rep.run_count == 2
    assert rep.means["bleu"] == pytest.approx(5.0)
    assert rep.stds["bleu"] == pytest.approx(7.0710678118654755)
    assert rep.stds["rouge_l"] == 0.0


def test_aggregate_single_run_std_zero():
    rep = aggregate_runs({"bleu": [42.0]})
    assert rep.run_count == 1
    assert rep.stds["bleu"] == 0.0
    assert rep.means["bleu"] == 42.0


def test_aggregate_run_count_mismatch():
    with pytest.raises(DomainError):
        aggregate_runs({"a": [1.0, 2.0], "b": [1.0]})
    with pytest.raises(DomainError):
        aggregate_runs({})


def test_report_serialization_and_table():
    rep = aggregate_runs({"bleu": [50.0, 60.0], "exact_match": [10.0, 20.0]})
    d = rep.to_json_dict()
    assert d["bleu"]["mean"] == pytest.approx(55.0)
    assert d["bleu"]["runs"] == [50.0, 60.0]
    table = rep.format_table()
    assert "bleu" in table and "exact_match" in table
    assert "55.0" in table


def test_metric_ranges_random_inputs():
    rng = np.random.default_rng(0)
    vocab = ["a", "b", "c"]
    for _ in range(50):
        cand = [
            [vocab[i] for i in rng.integers(0, 3, size=rng.integers(1, 6))]
        ]
        ref = [[[vocab[i] for i in rng.integers(0, 3, size=rng.integers(1, 6))]]]
        src = [[vocab[i] for i in rng.integers(0, 3, size=rng.integers(1, 6))]]
        for val in (
            bleu(cand, ref),
            rouge_l_corpus(cand, ref),
            sari(src, cand, ref),
            exact_match(cand, ref),
        ):
            assert 0.0 <= val <= 100.0
