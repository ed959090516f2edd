"""Training objective and loop for the tiny denoiser.

Each step draws, per example: a noise level t uniform on
[epsilon_min, 1], a condition-dropout coin (for guidance training), and
a masked corruption of the target region at rate t. The loss is the
t-weighted masked cross-entropy

    (1/t) * sum over masked positions of -log p(x0 | x_t, y)

summed over the batch and normalized by the total masked-token count.
Optimization is Adam with decoupled weight decay (beta1 0.9, beta2
0.95), global-norm gradient clipping, a linear-warmup inverse-sqrt LR
schedule, and an EMA shadow of the parameters for evaluation.

Everything is double precision and deterministic given the config seed;
per-example noise draws come from one generator in batch order (t,
dropout coin, mask uniforms, in that order for each example).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nn
from .corpus import LayoutSeq, Vocab
from .denoiser import ArchConfig, tiny_init
from .diffusion import NoiseSchedule, forward_mask
from .errors import ContractError, DivergenceError, DomainError
from .guidance import null_condition

__all__ = [
    "TrainConfig",
    "LossRecord",
    "PreparedExample",
    "AdamState",
    "TrainResult",
    "masked_ce_loss",
    "dropout_condition",
    "lr_at",
    "ema_update",
    "adamw_update",
    "clip_grad",
    "prepare_example",
    "batch_loss_and_grad",
    "train_step",
    "train",
]


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    peak_lr: float = 3e-3
    warmup_steps: int = 100
    weight_decay: float = 0.01
    ema_decay: float = 0.999
    cfg_dropout_prob: float = 0.1
    epsilon_min: float = 1e-5
    seed: int = 0
    grad_clip: float = 1.0
    log_every: int = 50

    def __post_init__(self) -> None:
        if self.steps < 1 or self.batch_size < 1 or self.warmup_steps < 1:
            raise DomainError("steps, batch_size and warmup_steps must be >= 1")
        if not (self.peak_lr > 0 and math.isfinite(self.peak_lr)):
            raise DomainError(f"peak_lr must be positive, got {self.peak_lr}")
        if self.weight_decay < 0:
            raise DomainError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 <= self.ema_decay < 1.0:
            raise DomainError(f"ema_decay must be in [0, 1), got {self.ema_decay}")
        if not 0.0 <= self.cfg_dropout_prob < 1.0:
            raise DomainError(
                f"cfg_dropout_prob must be in [0, 1), got {self.cfg_dropout_prob}"
            )
        if not 0.0 < self.epsilon_min < 1.0:
            raise DomainError(f"epsilon_min must be in (0, 1), got {self.epsilon_min}")
        if not self.grad_clip > 0:
            raise DomainError(f"grad_clip must be positive, got {self.grad_clip}")
        if self.log_every < 1:
            raise DomainError(f"log_every must be >= 1, got {self.log_every}")


@dataclass(frozen=True)
class LossRecord:
    step: int
    loss: float
    lr: float
    masked_tokens: int
    t_mean: float


def masked_ce_loss(
    logprob_grid: np.ndarray,
    target_tokens: np.ndarray,
    masked: np.ndarray,
    t: float,
    epsilon_min: float = 1e-5,
) -> float:
    """Single-example loss: (1/t) * sum of -log p at the masked positions."""
    if t < epsilon_min:
        raise DomainError(f"t = {t} below epsilon_min = {epsilon_min}")
    if t > 1.0:
        raise DomainError(f"t = {t} above 1")
    idx = np.nonzero(np.asarray(masked, dtype=bool))[0]
    if idx.size == 0:
        return 0.0
    picked = logprob_grid[idx, np.asarray(target_tokens, dtype=np.int64)[idx]]
    return float(-math.fsum(picked) / t)


def dropout_condition(
    condition_tokens: np.ndarray,
    cfg_dropout_prob: float,
    rng: np.random.Generator,
    mask_id: int,
    sep_id: int,
) -> np.ndarray:
    """With the configured probability, replace the condition content by masks.

    Always consumes exactly one uniform, so the downstream draw sequence
    does not depend on the coin's outcome.
    """
    if not 0.0 <= cfg_dropout_prob < 1.0:
        raise DomainError(
            f"cfg_dropout_prob must be in [0, 1), got {cfg_dropout_prob}"
        )
    u = rng.random()
    if u < cfg_dropout_prob:
        return null_condition(condition_tokens, mask_id, sep_id)
    return np.asarray(condition_tokens, dtype=np.int64)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to peak_lr, then inverse-square-root decay."""
    if step < 1:
        raise DomainError(f"step must be >= 1, got {step}")
    if step <= cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    return cfg.peak_lr * math.sqrt(cfg.warmup_steps / step)


def ema_update(shadow: np.ndarray, params: np.ndarray, decay: float) -> np.ndarray:
    if shadow.shape != params.shape:
        raise ContractError(
            f"EMA shape {shadow.shape} does not match params shape {params.shape}"
        )
    if not 0.0 <= decay < 1.0:
        raise DomainError(f"decay must be in [0, 1), got {decay}")
    return decay * shadow + (1.0 - decay) * params


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), step=0)


def adamw_update(
    params: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    *,
    beta1: float = 0.9,
    beta2: float = 0.95,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> np.ndarray:
    """One Adam step with decoupled weight decay; mutates ``state``."""
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ContractError("params, grad and optimizer state shapes differ")
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1**state.step)
    v_hat = state.v / (1.0 - beta2**state.step)
    return params - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * params)


def clip_grad(grad: np.ndarray, max_norm: float) -> tuple[np.ndarray, float]:
    """Scale ``grad`` so its global L2 norm is at most ``max_norm``."""
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm), norm
    return grad, norm


@dataclass(frozen=True, eq=False)
class PreparedExample:
    """One example with its noise already applied."""

    tokens: np.ndarray        # full layout, condition possibly nulled
    condition_len: int
    target_tokens: np.ndarray  # clean target region
    masked: np.ndarray         # bool over target positions
    t: float


def prepare_example(
    seq: LayoutSeq,
    cfg: TrainConfig,
    vocab: Vocab,
    rng: np.random.Generator,
    schedule: NoiseSchedule,
) -> PreparedExample:
    """Draw (t, dropout coin, mask pattern) for one example, in that order."""
    t = schedule.sample_t(rng)
    condition = dropout_condition(
        seq.tokens[: seq.condition_len],
        cfg.cfg_dropout_prob,
        rng,
        vocab.mask_id,
        vocab.sep_id,
    )
    noisy = forward_mask(seq.tokens, seq.condition_len, t, rng, vocab.mask_id)
    tokens = noisy.tokens.copy()
    tokens[: seq.condition_len] = condition
    return PreparedExample(
        tokens=tokens,
        condition_len=seq.condition_len,
        target_tokens=seq.target_tokens(),
        masked=noisy.masked(),
        t=t,
    )


def batch_loss_and_grad(
    params: np.ndarray,
    prepared: Sequence[PreparedExample],
    arch: ArchConfig,
    vocab: Vocab,
) -> tuple[float, np.ndarray, int]:
    """Batch loss and gradient, normalized by total masked tokens.

    Per-example terms are combined with exact (compensated) summation,
    so the loss value is invariant to permuting the batch; the gradient
    is accumulated in batch order and permutation-invariant only to
    float roundoff.
    """
    if not prepared:
        raise DomainError("batch must be nonempty")
    total_masked = int(sum(int(p.masked.sum()) for p in prepared))
    grad = np.zeros_like(params)
    if total_masked == 0:
        return 0.0, grad, 0
    V, L_max, d, H, n_layers, d_ff = arch.kernel_args()
    terms = []
    for p in prepared:
        if not p.masked.any():
            continue
        weight = 1.0 / (p.t * total_masked)
        loss_e, grad_e = nn.backend.masked_loss_grad(
            params, p.tokens, p.condition_len,
            V, L_max, d, H, n_layers, d_ff, vocab.mask_id,
            p.target_tokens, p.masked, weight,
        )
        terms.append(loss_e)
        grad += grad_e
    loss = float(math.fsum(terms))
    if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
        raise DivergenceError(f"non-finite loss or gradient (loss = {loss})")
    return loss, grad, total_masked


def train_step(
    params: np.ndarray,
    ema: np.ndarray,
    opt: AdamState,
    batch: Sequence[LayoutSeq],
    arch: ArchConfig,
    vocab: Vocab,
    cfg: TrainConfig,
    rng: np.random.Generator,
    step_index: int,
) -> tuple[np.ndarray, np.ndarray, LossRecord]:
    """One optimization step; returns (params, ema, record). Mutates ``opt``."""
    schedule = NoiseSchedule(epsilon_min=cfg.epsilon_min)
    prepared = [prepare_example(s, cfg, vocab, rng, schedule) for s in batch]
    loss, grad, total_masked = batch_loss_and_grad(params, prepared, arch, vocab)
    grad, _ = clip_grad(grad, cfg.grad_clip)
    lr = lr_at(step_index, cfg)
    params = adamw_update(
        params, grad, opt, lr,
        beta1=0.9, beta2=0.95, eps=1e-8, weight_decay=cfg.weight_decay,
    )
    if not np.all(np.isfinite(params)):
        raise DivergenceError(f"non-finite parameters after step {step_index}")
    ema = ema_update(ema, params, cfg.ema_decay)
    record = LossRecord(
        step=step_index,
        loss=loss,
        lr=lr,
        masked_tokens=total_masked,
        t_mean=float(np.mean([p.t for p in prepared])),
    )
    return params, ema, record


@dataclass
class TrainResult:
    params: np.ndarray
    ema_params: np.ndarray
    records: list[LossRecord] = field(default_factory=list)


def train(
    dataset: Sequence[LayoutSeq],
    arch: ArchConfig,
    vocab: Vocab,
    cfg: TrainConfig,
    *,
    init_params: np.ndarray | None = None,
    log_path: str | None = None,
    on_step: Callable[[LossRecord], None] | None = None,
) -> TrainResult:
    """Full training loop: init, sample batches with replacement, optimize.

    The one generator seeded by ``cfg.seed`` drives everything in a fixed
    order (init draws, then per step: batch indices, then per-example
    noise), so a rerun with the same config is bit-identical.
    """
    if not dataset:
        raise DomainError("dataset must be nonempty")
    rng = np.random.default_rng(cfg.seed)
    params = tiny_init(arch, rng) if init_params is None else init_params.copy()
    ema = params.copy()
    opt = AdamState.zeros(params.shape[0])
    result = TrainResult(params=params, ema_params=ema)

    log_fh = open(log_path, "w", encoding="utf-8", newline="") if log_path else None
    try:
        writer = None
        if log_fh is not None:
            writer = csv.writer(log_fh)
            writer.writerow(["step", "loss", "lr", "masked_tokens", "t_mean"])
        for step in range(1, cfg.steps + 1):
            idx = rng.integers(0, len(dataset), size=cfg.batch_size)
            batch = [dataset[int(i)] for i in idx]
            params, ema, record = train_step(
                params, ema, opt, batch, arch, vocab, cfg, rng, step
            )
            result.records.append(record)
            if writer is not None and (step % cfg.log_every == 0 or step == cfg.steps):
                writer.writerow(
                    [record.step, repr(record.loss), repr(record.lr),
                     record.masked_tokens, repr(record.t_mean)]
                )
            if on_step is not None:
                on_step(record)
    finally:
        if log_fh is not None:
            log_fh.close()
    result.params = params
    result.ema_params = ema
    return result
