"""Reference-based text metrics and multi-run aggregation.

All metrics operate on token sequences (lists of strings) and return
scores in [0, 100]. Conventions are pinned here because reference
implementations disagree on the edges:

* BLEU: corpus-level, clipped n-gram precisions with a geometric mean
  over n = 1..max_n where max_n is clamped to the shortest candidate
  length; no smoothing (any zero precision gives 0); brevity penalty
  exp(min(0, 1 - r/c)) with r the sum of closest reference lengths,
  ties resolved toward the shorter reference.
* ROUGE-L: longest-common-subsequence F-measure with beta = 1.2
  (recall-weighted), best reference wins, sentence level.
* SARI: mean over n = 1..4 of (keep-F1 + add-F1 + delete-precision)/3
  on n-gram multisets, reference counts averaged fractionally across
  references. A category empty on both system and reference sides
  contributes 0, except keep on a fully identical (source = candidate
  = every reference) triple, which contributes 100; the identity triple
  therefore scores 100/3.
* Exact match: percentage of candidates equal to any of their references.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError

__all__ = [
    "bleu",
    "rouge_l",
    "rouge_l_corpus",
    "sari",
    "exact_match",
    "aggregate_runs",
    "EvalReport",
]

Tokens = Sequence[str]


def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _check_aligned(candidates: Sequence, references: Sequence) -> None:
    if len(candidates) != len(references):
        raise DomainError(
            f"{len(candidates)} candidates vs {len(references)} reference sets"
        )
    if len(candidates) == 0:
        raise DomainError("need at least one candidate")
    for i, refs in enumerate(references):
        if len(refs) == 0:
            raise DomainError(f"candidate {i} has an empty reference set")


def bleu(
    candidates: Sequence[Tokens],
    references: Sequence[Sequence[Tokens]],
    max_n: int = 4,
) -> float:
    """Corpus BLEU in [0, 100]."""
    _check_aligned(candidates, references)
    if max_n < 1:
        raise DomainError(f"max_n must be >= 1, got {max_n}")
    shortest = min(len(c) for c in candidates)
    if shortest == 0:
        return 0.0
    n_max = min(max_n, shortest)

    log_precisions = []
    for n in range(1, n_max + 1):
        matched = 0
        total = 0
        for cand, refs in zip(candidates, references):
            cand_counts = _ngrams(cand, n)
            if not cand_counts:
                continue
            ref_max: Counter = Counter()
            for ref in refs:
                for gram, count in _ngrams(ref, n).items():
                    if count > ref_max[gram]:
                        ref_max[gram] = count
            matched += sum(min(c, ref_max[g]) for g, c in cand_counts.items())
            total += sum(cand_counts.values())
        if matched == 0 or total == 0:
            return 0.0
        log_precisions.append(math.log(matched / total))

    cand_len = sum(len(c) for c in candidates)
    ref_len = 0
    for cand, refs in zip(candidates, references):
        # Closest reference length; ties go to the shorter reference.
        ref_len += min((len(r) for r in refs), key=lambda L: (abs(L - len(cand)), L))
    bp = math.exp(min(0.0, 1.0 - ref_len / cand_len))
    return 100.0 * bp * math.exp(sum(log_precisions) / n_max)


def _lcs_len(a: Tokens, b: Tokens) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate: Tokens, references: Sequence[Tokens], beta: float = 1.2) -> float:
    """Sentence-level ROUGE-L F-measure in [0, 100], best reference wins."""
    if len(references) == 0:
        raise DomainError("need at least one reference")
    best = 0.0
    for ref in references:
        lcs = _lcs_len(candidate, ref)
        if lcs == 0 or not candidate or not ref:
            continue
        p = lcs / len(candidate)
        r = lcs / len(ref)
        f = (1.0 + beta * beta) * p * r / (r + beta * beta * p)
        best = max(best, f)
    return 100.0 * best


def rouge_l_corpus(
    candidates: Sequence[Tokens],
    references: Sequence[Sequence[Tokens]],
    beta: float = 1.2,
) -> float:
    """Mean sentence-level ROUGE-L over the corpus."""
    _check_aligned(candidates, references)
    return float(np.mean([rouge_l(c, r, beta) for c, r in zip(candidates, references)]))


def _fractional_refs(refs: Sequence[Tokens], n: int) -> dict:
    out: dict = {}
    k = len(refs)
    for ref in refs:
        for gram, count in _ngrams(ref, n).items():
            out[gram] = out.get(gram, 0.0) + count / k
    return out


def _multiset_f1(sys: Mapping, ref: Mapping) -> float:
    sys_total = sum(sys.values())
    ref_total = sum(ref.values())
    if sys_total == 0 or ref_total == 0:
        return 0.0
    inter = sum(min(c, ref.get(g, 0.0)) for g, c in sys.items())
    p = inter / sys_total
    r = inter / ref_total
    if p + r == 0.0:
        return 0.0
    return 2.0 * p * r / (p + r)


def _sari_instance(source: Tokens, candidate: Tokens, refs: Sequence[Tokens]) -> float:
    identical = list(candidate) == list(source) and all(
        list(r) == list(source) for r in refs
    )
    per_n = []
    for n in range(1, 5):
        s = _ngrams(source, n)
        c = _ngrams(candidate, n)
        rbar = _fractional_refs(refs, n)

        keep_sys = {g: min(cnt, c.get(g, 0)) for g, cnt in s.items()}
        keep_ref = {g: min(cnt, rbar.get(g, 0.0)) for g, cnt in s.items()}
        keep = 1.0 if identical else _multiset_f1(
            {g: v for g, v in keep_sys.items() if v > 0},
            {g: v for g, v in keep_ref.items() if v > 0},
        )

        add_sys = {g: cnt - s.get(g, 0) for g, cnt in c.items() if cnt > s.get(g, 0)}
        add_ref = {
            g: cnt - s.get(g, 0) for g, cnt in rbar.items() if cnt > s.get(g, 0)
        }
        add = _multiset_f1(add_sys, add_ref)

        del_sys = {g: cnt - c.get(g, 0) for g, cnt in s.items() if cnt > c.get(g, 0)}
        del_ref = {
            g: cnt - rbar.get(g, 0.0) for g, cnt in s.items() if cnt > rbar.get(g, 0.0)
        }
        del_total = sum(del_sys.values())
        if del_total == 0:
            del_p = 0.0
        else:
            inter = sum(min(cnt, del_ref.get(g, 0.0)) for g, cnt in del_sys.items())
            del_p = inter / del_total

        per_n.append((keep + add + del_p) / 3.0)
    return 100.0 * float(np.mean(per_n))


def sari(
    sources: Sequence[Tokens],
    candidates: Sequence[Tokens],
    references: Sequence[Sequence[Tokens]],
) -> float:
    """Corpus SARI in [0, 100]: mean of per-instance scores."""
    if len(sources) != len(candidates):
        raise DomainError(f"{len(sources)} sources vs {len(candidates)} candidates")
    _check_aligned(candidates, references)
    return float(
        np.mean(
            [
                _sari_instance(s, c, r)
                for s, c, r in zip(sources, candidates, references)
            ]
        )
    )


def exact_match(
    candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]]
) -> float:
    """Percentage of candidates equal to at least one of their references."""
    _check_aligned(candidates, references)
    hits = sum(
        any(list(c) == list(r) for r in refs)
        for c, refs in zip(candidates, references)
    )
    return 100.0 * hits / len(candidates)


@dataclass(frozen=True)
class EvalReport:
    """Per-metric mean and sample standard deviation across runs."""

    means: dict[str, float]
    stds: dict[str, float]
    run_count: int
    per_run: dict[str, tuple[float, ...]]

    def to_json_dict(self) -> dict:
        return {
            metric: {
                "mean": self.means[metric],
                "std": self.stds[metric],
                "runs": list(self.per_run[metric]),
            }
            for metric in self.means
        }

    def format_table(self) -> str:
        name_w = max(len("metric"), *(len(m) for m in self.means))
        lines = [
            f"{'metric':<{name_w}}  {'mean':>10}  {'std':>10}  {'runs':>4}",
        ]
        for metric in self.means:
            lines.append(
                f"{metric:<{name_w}}  {self.means[metric]:>10.4f}  "
                f"{self.stds[metric]:>10.4f}  {self.run_count:>4}"
            )
        return "\n".join(lines)


def aggregate_runs(per_run_scores: Mapping[str, Sequence[float]]) -> EvalReport:
    """Mean and sample std (n-1 denominator; 0 for a single run) per metric."""
    if not per_run_scores:
        raise DomainError("no metrics to aggregate")
    counts = {len(v) for v in per_run_scores.values()}
    if len(counts) != 1:
        raise DomainError(f"metrics disagree on run count: {sorted(counts)}")
    n = counts.pop()
    if n < 1:
        raise DomainError("need at least one run")
    means = {}
    stds = {}
    per_run = {}
    for metric, values in per_run_scores.items():
        arr = np.asarray(values, dtype=np.float64)
        means[metric] = float(arr.mean())
        stds[metric] = float(arr.std(ddof=1)) if n > 1 else 0.0
        per_run[metric] = tuple(float(v) for v in values)
    return EvalReport(means=means, stds=stds, run_count=n, per_run=per_run)
