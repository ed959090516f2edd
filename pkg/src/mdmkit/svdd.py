"""Soft-value search over the reverse process.

Each denoising step widens the reverse kernel into M independent
candidate draws, scores every candidate by the reward its clean-data
estimate would earn, and keeps one candidate per the configured
selection rule. The value of a partially masked candidate is the
posterior-mean approximation: run the guided denoiser on it, fill every
masked position with the per-position argmax token, detokenize, embed,
and take the cosine reward against the embedded input sentence.

Budget: a decode with T steps and M candidates performs exactly
T * (1 + M) guided predictions in argmax-fill mode - one to form the
step's proposal distribution, M to score the drawn candidates.

RNG discipline: candidates are drawn candidate-major (candidate m is
drawn completely before m+1) from the same generator the plain
ancestral decoder would use, and a singleton selection consumes no
randomness, so M = 1 reproduces ancestral decoding bit for bit with a
shared seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import detokenize
from .denoiser import Denoiser
from .diffusion import NoisyState, TimestepGrid, sample_reverse_step
from .errors import DomainError
from .guidance import guided_predict
from .sampler import DecodeConfig, initial_state
from .verifier import Embedder, cosine_reward

__all__ = [
    "Candidate",
    "SvddConfig",
    "value_pma",
    "select_argmax",
    "select_soft",
    "svdd_decode",
]

_SELECTIONS = ("argmax", "soft")
_FILLS = ("argmax_fill", "sample_fill")


@dataclass(frozen=True, eq=False)
class Candidate:
    """One drawn reverse-step outcome with its estimated value."""

    state: NoisyState
    value: float
    x0_fill: np.ndarray
    sentence: str

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise DomainError(f"candidate value must be finite, got {self.value}")
        if np.any(self.x0_fill == self.state.mask_id):
            raise DomainError("x0_fill must not contain mask tokens")


@dataclass(frozen=True)
class SvddConfig:
    """Search knobs: candidate count, selection rule, value fill mode."""

    M: int = 1
    selection: str = "argmax"
    alpha: float | None = None
    value_fill: str = "argmax_fill"

    def __post_init__(self) -> None:
        if self.M < 1:
            raise DomainError(f"M must be >= 1, got {self.M}")
        if self.selection not in _SELECTIONS:
            raise DomainError(
                f"selection must be one of {_SELECTIONS}, got {self.selection!r}"
            )
        if self.selection == "soft":
            if self.alpha is None or not (self.alpha > 0):
                raise DomainError("soft selection requires alpha > 0")
        elif self.alpha is not None:
            raise DomainError("alpha is only meaningful with soft selection")
        if self.value_fill not in _FILLS:
            raise DomainError(
                f"value_fill must be one of {_FILLS}, got {self.value_fill!r}"
            )


def value_pma(
    candidate_state: NoisyState,
    denoiser: Denoiser,
    gamma: float,
    condition_tokens: np.ndarray,
    embedder: Embedder,
    input_embedding: np.ndarray,
    *,
    value_fill: str = "argmax_fill",
    rng: np.random.Generator | None = None,
) -> tuple[float, np.ndarray, str]:
    """Posterior-mean value of a candidate: reward of its filled estimate.

    Returns ``(value, x0_fill, sentence)``. The default fill commits each
    masked position to its argmax token, which makes values deterministic
    given the candidate; ``sample_fill`` draws the fill from the guided
    grid instead and needs an explicit generator.
    """
    grid = guided_predict(denoiser, candidate_state, condition_tokens, gamma)
    filled = candidate_state.target_tokens().copy()
    masked_idx = np.nonzero(candidate_state.masked())[0]
    if masked_idx.size:
        if value_fill == "argmax_fill":
            filled[masked_idx] = grid[masked_idx].argmax(axis=1)
        elif value_fill == "sample_fill":
            if rng is None:
                raise DomainError("sample_fill requires a random generator")
            rows = np.exp(grid[masked_idx])
            cdf = np.cumsum(rows, axis=1)
            cdf[:, -1] = np.maximum(cdf[:, -1], 1.0)
            u = rng.random(masked_idx.size)
            filled[masked_idx] = (u[:, None] > cdf).sum(axis=1)
        else:
            raise DomainError(f"unknown value_fill {value_fill!r}")
    sentence = detokenize(filled, denoiser.vocab)
    candidate_embedding = embedder.embed([sentence])[0]
    value = cosine_reward(candidate_embedding, input_embedding)
    return value, filled, sentence


def _index_of(candidates: Sequence[Candidate], chosen: Candidate) -> int:
    for i, c in enumerate(candidates):
        if c is chosen:
            return i
    raise DomainError("selected candidate is not in the candidate list")


def select_argmax(candidates: Sequence[Candidate]) -> Candidate:
    """Highest-value candidate; ties go to the lowest index."""
    if not candidates:
        raise DomainError("cannot select from an empty candidate list")
    best = 0
    for i in range(1, len(candidates)):
        if candidates[i].value > candidates[best].value:
            best = i
    return candidates[best]


def select_soft(
    candidates: Sequence[Candidate], alpha: float, rng: np.random.Generator
) -> Candidate:
    """Sample a candidate with probability proportional to exp(value/alpha).

    Weights are max-shifted before exponentiation for stability. A
    singleton list short-circuits without consuming randomness, keeping
    M = 1 runs on the ancestral decoder's RNG stream.
    """
    if not candidates:
        raise DomainError("cannot select from an empty candidate list")
    if not alpha > 0:
        raise DomainError(f"alpha must be > 0, got {alpha}")
    if len(candidates) == 1:
        return candidates[0]
    values = np.asarray([c.value for c in candidates], dtype=np.float64)
    w = np.exp((values - values.max()) / alpha)
    cdf = np.cumsum(w / w.sum())
    cdf[-1] = max(cdf[-1], 1.0)
    u = rng.random()
    idx = int((u > cdf).sum())
    return candidates[idx]


def svdd_decode(
    denoiser: Denoiser,
    condition_tokens: np.ndarray,
    decode_cfg: DecodeConfig,
    svdd_cfg: SvddConfig,
    embedder: Embedder,
    rng: np.random.Generator,
    *,
    input_sentence: str | None = None,
    on_step: Callable[[int, float, float, list[Candidate], int], None] | None = None,
) -> np.ndarray:
    """Reward-searched ancestral decoding; returns target tokens.

    The input sentence defaults to the detokenized condition content and
    is embedded exactly once. ``on_step(step, t, s, candidates, chosen)``
    exposes each step's candidate set for inspection.
    """
    vocab = denoiser.vocab
    state = initial_state(condition_tokens, decode_cfg.target_len, vocab.mask_id)
    condition = state.tokens[: state.condition_len]
    if input_sentence is None:
        input_sentence = detokenize(condition, vocab)
    input_embedding = embedder.embed([input_sentence])[0]

    for step, (t, s) in enumerate(TimestepGrid(decode_cfg.T)):
        grid = guided_predict(denoiser, state, condition, decode_cfg.gamma)
        drawn: list[NoisyState] = [
            sample_reverse_step(state, s, grid, rng) for _ in range(svdd_cfg.M)
        ]
        candidates: list[Candidate] = []
        for cand_state in drawn:
            value, fill, sentence = value_pma(
                cand_state,
                denoiser,
                decode_cfg.gamma,
                condition,
                embedder,
                input_embedding,
                value_fill=svdd_cfg.value_fill,
                rng=rng if svdd_cfg.value_fill == "sample_fill" else None,
            )
            candidates.append(
                Candidate(state=cand_state, value=value, x0_fill=fill, sentence=sentence)
            )
        if len(candidates) == 1:
            chosen = 0
        elif svdd_cfg.selection == "argmax":
            chosen = _index_of(candidates, select_argmax(candidates))
        else:
            chosen = _index_of(
                candidates, select_soft(candidates, float(svdd_cfg.alpha), rng)
            )
        if on_step is not None:
            on_step(step, t, s, candidates, chosen)
        state = candidates[chosen].state
    return state.target_tokens()
