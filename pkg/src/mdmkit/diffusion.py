"""Absorbing-state masking process: forward corruption and reverse steps.

Time runs continuously from 0 (clean) to 1 (fully masked). Under the
linear schedule a target token survives to time ``t`` with probability

    alpha(t) = 1 - t,

independently per position; masked tokens are replaced by the mask id.
The condition region of a sequence is never corrupted.

Given a model estimate ``p(x0 | x_t)`` of the clean token at each still
masked position, the exact reverse kernel from time ``t`` to ``s < t``
factorizes per position:

    unmasked position:  carry the token over with probability 1
    masked position:    unmask to token v with probability ((t-s)/t) p(v|x_t)
                        stay masked with probability s/t

so that at ``s = 0`` every position unmasks. These per-position
distributions are what :func:`reverse_step_distribution` returns and
what :func:`sample_reverse_step` draws from.

All probabilities live in float64. Log-probability grids floor at
:data:`LOG_ZERO`, chosen so ``exp(LOG_ZERO)`` underflows to exactly 0.0:
rows stay finite while excluded tokens (in particular the mask token
itself) carry probability exactly zero, which is what makes the
``s = 0`` step provably mask-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError

__all__ = [
    "LOG_ZERO",
    "NoiseSchedule",
    "NoisyState",
    "TimestepGrid",
    "forward_mask",
    "reverse_step_distribution",
    "sample_reverse_step",
]

#: Floor for log probabilities. exp(-1e4) == 0.0 exactly in float64, so a
#: floored entry is a true zero in probability space, yet every row of a
#: log-probability grid remains finite.
LOG_ZERO = -1.0e4

#: Row-normalization tolerance in probability space.
_NORM_TOL = 1e-9


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear masking schedule ``alpha(t) = 1 - t``.

    ``epsilon_min`` is the smallest noise level training ever draws;
    sampling t exactly 0 would make the loss weight 1/t blow up.
    """

    epsilon_min: float = 1e-5

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon_min < 1.0:
            raise DomainError(f"epsilon_min must lie in (0, 1), got {self.epsilon_min}")

    def alpha(self, t: float) -> float:
        """Survival probability of a token at time ``t``."""
        if not 0.0 <= t <= 1.0:
            raise DomainError(f"t must lie in [0, 1], got {t}")
        return 1.0 - t

    def sample_t(self, rng: np.random.Generator) -> float:
        """Draw a training noise level t ~ Uniform(epsilon_min, 1)."""
        return float(rng.uniform(self.epsilon_min, 1.0))


@dataclass(frozen=True, eq=False)
class NoisyState:
    """A partially masked layout at noise level ``t``.

    ``tokens`` is the full layout (condition region then target region).
    Within the target region a position is masked exactly when its token
    equals ``mask_id``; the condition region is never considered masked,
    even when it holds mask tokens (the null condition used for
    classifier-free guidance is all-mask by construction).
    """

    tokens: np.ndarray
    condition_len: int
    t: float
    mask_id: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.t <= 1.0:
            raise DomainError(f"t must lie in [0, 1], got {self.t}")
        if not 0 < self.condition_len < self.tokens.shape[0]:
            raise DomainError(
                f"condition_len {self.condition_len} must leave a nonempty target "
                f"in a length-{self.tokens.shape[0]} layout"
            )

    @property
    def target_len(self) -> int:
        return int(self.tokens.shape[0]) - self.condition_len

    def target_tokens(self) -> np.ndarray:
        return self.tokens[self.condition_len :]

    def masked(self) -> np.ndarray:
        """Boolean array over target positions: True where still masked."""
        return self.target_tokens() == self.mask_id

    def replace_target(self, new_target: np.ndarray, s: float) -> "NoisyState":
        """New state at time ``s`` with the target region replaced."""
        if new_target.shape[0] != self.target_len:
            raise ContractError(
                f"replacement target has length {new_target.shape[0]}, "
                f"expected {self.target_len}"
            )
        tokens = np.concatenate([self.tokens[: self.condition_len], new_target])
        return NoisyState(
            tokens=tokens, condition_len=self.condition_len, t=s, mask_id=self.mask_id
        )


@dataclass(frozen=True)
class TimestepGrid:
    """The uniform decode grid t = 1, (T-1)/T, ..., 1/T with s = t - 1/T."""

    T: int
    steps: tuple[tuple[float, float], ...] = field(init=False)

    def __post_init__(self) -> None:
        if self.T < 1:
            raise DomainError(f"T must be >= 1, got {self.T}")
        # Compute each endpoint as k/T directly so the final s is exactly 0.0
        # and consecutive steps share their endpoint bit-for-bit.
        pairs = tuple(
            ((self.T - i) / self.T, (self.T - i - 1) / self.T) for i in range(self.T)
        )
        object.__setattr__(self, "steps", pairs)

    def __iter__(self):
        return iter(self.steps)

    def __len__(self) -> int:
        return self.T


def forward_mask(
    layout_tokens: np.ndarray,
    condition_len: int,
    t: float,
    rng: np.random.Generator,
    mask_id: int = 1,
) -> NoisyState:
    """Corrupt the target region of a clean layout to noise level ``t``.

    Each target position is masked independently with probability
    ``1 - alpha(t) = t``; the condition region is copied through
    untouched.

    Args:
        layout_tokens: clean full layout (condition then target).
        condition_len: length of the condition region, separator included.
        t: noise level in [0, 1].
        rng: seeded generator; consumes exactly one uniform per target
            position, in ascending position order.
        mask_id: id of the mask token.

    Returns:
        ``NoisyState`` at time ``t`` whose masked set is exactly the set
        of positions the Bernoulli draws selected.
    """
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must lie in [0, 1], got {t}")
    target = layout_tokens[condition_len:]
    if np.any(target == mask_id):
        raise ContractError("clean layout already contains mask tokens in its target")
    drop = rng.random(target.shape[0]) < t
    noisy_target = np.where(drop, np.int64(mask_id), target)
    tokens = np.concatenate([layout_tokens[:condition_len], noisy_target])
    return NoisyState(tokens=tokens, condition_len=condition_len, t=t, mask_id=mask_id)


def _check_log_grid(x0_logprobs: np.ndarray, target_len: int) -> np.ndarray:
    grid = np.asarray(x0_logprobs, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] != target_len:
        raise ContractError(
            f"logit grid shape {grid.shape} does not match target length {target_len}"
        )
    row_sums = np.exp(grid).sum(axis=1)
    if not np.all(np.abs(row_sums - 1.0) <= _NORM_TOL):
        worst = float(np.max(np.abs(row_sums - 1.0)))
        raise ContractError(
            f"logit grid rows are not normalized (worst deviation {worst:.3e})"
        )
    return grid


def reverse_step_distribution(
    state: NoisyState,
    s: float,
    x0_logprobs: np.ndarray,
) -> np.ndarray:
    """Per-position next-token distributions for the step t -> s.

    The returned array has shape ``(target_len, V)`` in probability
    space. Column ``mask_id`` is the stay-masked probability; every
    other column v is the probability of unmasking to v. Positions
    already unmasked get a point mass on their current token.

    Args:
        state: current noisy state at time ``state.t``.
        s: destination time, ``0 <= s < state.t``.
        x0_logprobs: normalized log-probability grid over clean tokens,
            shape ``(target_len, V)``; the mask column must carry zero
            probability (the :data:`LOG_ZERO` floor guarantees this for
            grids produced by this package).

    Returns:
        Probability matrix whose rows sum to 1 within 1e-9.
    """
    t = state.t
    if not 0.0 <= s < t:
        raise DomainError(f"need 0 <= s < t, got s={s}, t={t}")
    grid = _check_log_grid(x0_logprobs, state.target_len)
    V = grid.shape[1]
    probs = np.exp(grid)
    if float(probs[:, state.mask_id].max(initial=0.0)) > 0.0:
        raise ContractError("x0 prediction assigns nonzero probability to the mask token")

    out = np.zeros((state.target_len, V), dtype=np.float64)
    masked = state.masked()
    # Masked positions: scaled unmask probabilities plus the stay-masked atom.
    out[masked] = ((t - s) / t) * probs[masked]
    out[masked, state.mask_id] = s / t
    # Unmasked positions: carry over with probability 1.
    idx = np.nonzero(~masked)[0]
    out[idx, state.target_tokens()[idx]] = 1.0
    return out


def sample_reverse_step(
    state: NoisyState,
    s: float,
    x0_logprobs: np.ndarray,
    rng: np.random.Generator,
) -> NoisyState:
    """Draw one reverse step t -> s from :func:`reverse_step_distribution`.

    Consumes exactly one uniform per *masked* position, in ascending
    position order; unmasked positions are carried over bit-identically
    without touching the generator. At ``s = 0`` the result contains no
    mask tokens.
    """
    dist = reverse_step_distribution(state, s, x0_logprobs)
    target = state.target_tokens().copy()
    masked_idx = np.nonzero(state.masked())[0]
    if masked_idx.size:
        u = rng.random(masked_idx.size)
        rows = dist[masked_idx]
        cdf = np.cumsum(rows, axis=1)
        # Guard the final edge: row sums may fall a hair under 1.0 in
        # float, and a uniform above the last cumulative value must still
        # select a valid token.
        cdf[:, -1] = np.maximum(cdf[:, -1], 1.0)
        choice = (u[:, None] > cdf).sum(axis=1)
        target[masked_idx] = choice
    return state.replace_target(target, s)
