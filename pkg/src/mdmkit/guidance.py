"""Classifier-free guidance over denoiser log-probability grids.

The guided distribution at each target position mixes the conditional
and unconditional predictions in log space:

    log g = gamma * log p(. | x_t, y) + (1 - gamma) * log p(. | x_t, phi)

then renormalizes per position. ``phi`` is the null condition: every
condition content token replaced by the mask token, the separator kept,
so the unconditional pass sees the same layout geometry the conditional
pass does. ``gamma = 1`` short-circuits to the conditional grid, bit for
bit, with a single denoiser call.
"""

from __future__ import annotations

import math

import numpy as np

from .denoiser import Denoiser, predict
from .diffusion import LOG_ZERO, NoisyState
from .errors import ContractError, DomainError

__all__ = ["cfg_combine", "guided_predict", "null_condition"]


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not math.isfinite(gamma) or gamma < 0.0:
        raise DomainError(f"gamma must be finite and >= 0, got {gamma}")
    return gamma


def null_condition(
    condition_tokens: np.ndarray, mask_id: int, sep_id: int
) -> np.ndarray:
    """The all-mask condition phi, separator positions retained.

    Layouts place exactly one separator at the end of the condition
    region; keeping it means phi differs from a real condition only in
    content, not in shape.
    """
    condition_tokens = np.asarray(condition_tokens, dtype=np.int64)
    if condition_tokens.shape[0] == 0:
        raise DomainError("condition must be nonempty")
    if condition_tokens[-1] != sep_id:
        raise ContractError("condition region does not end with the separator token")
    phi = np.full_like(condition_tokens, mask_id)
    phi[condition_tokens == sep_id] = sep_id
    return phi


def cfg_combine(cond: np.ndarray, uncond: np.ndarray, gamma: float) -> np.ndarray:
    """Mix two normalized log-probability grids at guidance scale ``gamma``.

    ``gamma = 1`` returns ``cond`` unchanged (the same array, untouched)
    and ``gamma = 0`` returns ``uncond``; every other scale combines in
    log space and renormalizes each row with a max-shifted log-sum-exp.
    The result is floored at LOG_ZERO so rows stay finite; anything at or
    below the floor has probability exactly zero under ``exp``.
    """
    gamma = _check_gamma(gamma)
    if cond.shape != uncond.shape:
        raise ContractError(
            f"grid shapes differ: cond {cond.shape} vs uncond {uncond.shape}"
        )
    if gamma == 1.0:
        return cond
    if gamma == 0.0:
        return uncond
    mixed = gamma * cond + (1.0 - gamma) * uncond
    m = mixed.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(mixed - m).sum(axis=1, keepdims=True))
    return np.maximum(mixed - lse, LOG_ZERO)


def guided_predict(
    denoiser: Denoiser,
    state: NoisyState,
    condition_tokens: np.ndarray,
    gamma: float,
) -> np.ndarray:
    """Guided log-probability grid for the state's target positions.

    One denoiser call at ``gamma = 1``; otherwise two, the second on an
    explicit phi-state whose condition region is :func:`null_condition`
    of the real one, combined by :func:`cfg_combine`.
    """
    gamma = _check_gamma(gamma)
    cond_grid = predict(denoiser, state, condition_tokens)
    if gamma == 1.0:
        return cond_grid
    vocab = denoiser.vocab
    phi = null_condition(
        np.asarray(condition_tokens, dtype=np.int64), vocab.mask_id, vocab.sep_id
    )
    phi_tokens = state.tokens.copy()
    phi_tokens[: state.condition_len] = phi
    phi_state = NoisyState(
        tokens=phi_tokens,
        condition_len=state.condition_len,
        t=state.t,
        mask_id=state.mask_id,
    )
    uncond_grid = predict(denoiser, phi_state, phi)
    return cfg_combine(cond_grid, uncond_grid, gamma)
