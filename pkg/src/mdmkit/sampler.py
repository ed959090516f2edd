"""Baseline decoders over the uniform timestep grid.

Both decoders start from an all-mask target of fixed length and walk the
grid t = 1, (T-1)/T, ..., 1/T down to s = 0, querying the (optionally
guided) denoiser once per step:

* ``ancestral_decode`` draws each step from the exact reverse kernel, so
  its trajectory distribution is the model's own.
* ``greedy_topk_decode`` is the deterministic confidence decoder: each
  step commits the most confident argmax tokens until ``floor(L*(1-s))``
  positions are unmasked in total.

Committed positions never change afterwards in either mode, and the
final state is mask-free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import Denoiser
from .diffusion import NoisyState, TimestepGrid, sample_reverse_step
from .errors import DomainError
from .guidance import guided_predict

__all__ = ["DecodeConfig", "initial_state", "ancestral_decode", "greedy_topk_decode"]

_MODES = ("ancestral", "greedy_topk")


@dataclass(frozen=True)
class DecodeConfig:
    """Shared decoding knobs: grid size, target length, guidance, mode."""

    T: int
    target_len: int
    gamma: float = 1.0
    seed: int = 0
    mode: str = "ancestral"

    def __post_init__(self) -> None:
        if self.T < 1:
            raise DomainError(f"T must be >= 1, got {self.T}")
        if self.target_len < 1:
            raise DomainError(f"target_len must be >= 1, got {self.target_len}")
        if self.gamma < 0:
            raise DomainError(f"gamma must be >= 0, got {self.gamma}")
        if self.mode not in _MODES:
            raise DomainError(f"mode must be one of {_MODES}, got {self.mode!r}")


def initial_state(
    condition_tokens: np.ndarray, target_len: int, mask_id: int
) -> NoisyState:
    """All-mask target appended to the condition, at t = 1."""
    condition_tokens = np.asarray(condition_tokens, dtype=np.int64)
    tokens = np.concatenate(
        [condition_tokens, np.full(target_len, mask_id, dtype=np.int64)]
    )
    return NoisyState(
        tokens=tokens, condition_len=condition_tokens.shape[0], t=1.0, mask_id=mask_id
    )


def ancestral_decode(
    denoiser: Denoiser,
    condition_tokens: np.ndarray,
    cfg: DecodeConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Sample a target sequence from the reverse process; returns target tokens."""
    vocab = denoiser.vocab
    state = initial_state(condition_tokens, cfg.target_len, vocab.mask_id)
    condition = state.tokens[: state.condition_len]
    for _t, s in TimestepGrid(cfg.T):
        grid = guided_predict(denoiser, state, condition, cfg.gamma)
        state = sample_reverse_step(state, s, grid, rng)
    return state.target_tokens()


def greedy_topk_decode(
    denoiser: Denoiser,
    condition_tokens: np.ndarray,
    cfg: DecodeConfig,
) -> np.ndarray:
    """Deterministic confidence decoding; returns target tokens.

    At the step ending at time s, exactly ``floor(L*(1-s))`` positions
    are committed in total. Committed positions carry confidence 1 and
    are never displaced; among uncommitted positions, commitment order
    is by argmax probability, ties broken lowest index first.
    """
    vocab = denoiser.vocab
    L = cfg.target_len
    state = initial_state(condition_tokens, L, vocab.mask_id)
    condition = state.tokens[: state.condition_len]
    committed = np.zeros(L, dtype=bool)
    target = state.target_tokens().copy()

    for _t, s in TimestepGrid(cfg.T):
        grid = guided_predict(denoiser, state, condition, cfg.gamma)
        argmax = grid.argmax(axis=1)
        confidence = np.exp(grid[np.arange(L), argmax])
        confidence[committed] = 1.0
        quota = int(np.floor(L * (1.0 - s)))
        need = quota - int(committed.sum())
        if need > 0:
            open_idx = np.nonzero(~committed)[0]
            # Stable sort on descending confidence keeps equal-confidence
            # positions in ascending index order.
            order = open_idx[np.argsort(-confidence[open_idx], kind="stable")]
            chosen = order[:need]
            target[chosen] = argmax[chosen]
            committed[chosen] = True
        state = state.replace_target(
            np.where(committed, target, vocab.mask_id), s
        )
    return state.target_tokens()
