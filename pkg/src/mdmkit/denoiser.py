"""Denoisers: tiny trained transformer and exact Bayes oracle.

A denoiser maps a partially masked state (plus its condition) to a
log-probability grid over clean tokens, one row per target position.
Rows are normalized; the mask token always carries probability exactly
zero (see :data:`mdmkit.diffusion.LOG_ZERO`), which is what the reverse
kernel requires of an x0 prediction.

Two implementations share that contract:

* :class:`TinyDenoiser`: a small transformer encoder whose parameters
  live in one flat float64 vector, evaluated by the compiled or numpy
  kernel backend. It is deliberately time-independent: the prediction
  depends on the state only through its tokens.
* :class:`OracleDenoiser`: the exact posterior over a finite weighted
  corpus of laid-out sequences ("atoms"): an atom is compatible with a
  state when it agrees on every non-mask position, and the per-position
  marginals of the renormalized atom weights are returned. On tiny
  corpora this is the Bayes-optimal denoiser that trained models are
  benchmarked against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from . import nn
from .corpus import LayoutSeq, Vocab
from .diffusion import LOG_ZERO, NoisyState
from .errors import ContractError, DomainError, FormatError, SupportError

__all__ = [
    "ArchConfig",
    "Denoiser",
    "TinyDenoiser",
    "OracleDenoiser",
    "predict",
    "oracle_posterior",
    "tiny_init",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_MAGIC = b"MDMCKPT\x00"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchConfig:
    """Shape descriptor for the tiny denoiser."""

    vocab_size: int
    max_len: int
    embed_dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ff_dim: int = 128

    def __post_init__(self) -> None:
        for name in ("vocab_size", "max_len", "embed_dim", "n_layers", "n_heads", "ff_dim"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.embed_dim % self.n_heads != 0:
            raise DomainError(
                f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}"
            )

    @property
    def param_count(self) -> int:
        return nn.backend.param_count(
            self.vocab_size, self.max_len, self.embed_dim, self.n_layers, self.ff_dim
        )

    def kernel_args(self) -> tuple[int, int, int, int, int, int]:
        return (
            self.vocab_size, self.max_len, self.embed_dim,
            self.n_heads, self.n_layers, self.ff_dim,
        )


class Denoiser(Protocol):
    """Anything with a grid-producing ``predict``; see :func:`predict`."""

    vocab: Vocab

    def predict_grid(self, state: NoisyState) -> np.ndarray: ...


def tiny_init(arch: ArchConfig, rng: np.random.Generator) -> np.ndarray:
    """Fresh flat parameter vector for ``arch``.

    Weight matrices draw from a zero-mean normal with scale
    ``1/sqrt(fan_in)`` (embedding tables use the embedding dimension as
    fan-in); biases start at zero and layernorm gains at one. Draws
    happen in parameter-layout order, so the same generator state always
    produces the same vector.
    """
    V, L_max, d, d_ff = arch.vocab_size, arch.max_len, arch.embed_dim, arch.ff_dim
    chunks: list[np.ndarray] = []

    def w(rows: int, cols: int, fan_in: int) -> None:
        chunks.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), rows * cols))

    def zeros(n: int) -> None:
        chunks.append(np.zeros(n))

    def ones(n: int) -> None:
        chunks.append(np.ones(n))

    w(V, d, d)        # tok_emb
    w(L_max, d, d)    # pos_emb
    for _ in range(arch.n_layers):
        ones(d); zeros(d)            # ln1
        for _ in range(4):           # wq, wk, wv, wo
            w(d, d, d); zeros(d)
        ones(d); zeros(d)            # ln2
        w(d, d_ff, d); zeros(d_ff)   # w1, b1
        w(d_ff, d, d_ff); zeros(d)   # w2, b2
    ones(d); zeros(d)                # final layernorm
    w(d, V, d); zeros(V)             # output head
    params = np.concatenate(chunks)
    if params.shape[0] != arch.param_count:
        raise ContractError(
            f"init produced {params.shape[0]} parameters, expected {arch.param_count}"
        )
    return params


@dataclass(eq=False)
class TinyDenoiser:
    """Trained denoiser: architecture descriptor plus flat parameters."""

    arch: ArchConfig
    params: np.ndarray
    vocab: Vocab

    def __post_init__(self) -> None:
        if self.params.ndim != 1 or self.params.shape[0] != self.arch.param_count:
            raise ContractError(
                f"parameter vector of shape {self.params.shape} does not match "
                f"architecture count {self.arch.param_count}"
            )
        if self.vocab.size != self.arch.vocab_size:
            raise ContractError(
                f"vocab size {self.vocab.size} does not match architecture "
                f"vocab_size {self.arch.vocab_size}"
            )

    def predict_grid(self, state: NoisyState) -> np.ndarray:
        V, L_max, d, H, n_layers, d_ff = self.arch.kernel_args()
        if state.tokens.shape[0] > L_max:
            raise DomainError(
                f"layout length {state.tokens.shape[0]} exceeds max_len {L_max}"
            )
        return nn.backend.forward_logprobs(
            self.params, state.tokens, state.condition_len,
            V, L_max, d, H, n_layers, d_ff, self.vocab.mask_id,
        )


class OracleDenoiser:
    """Exact posterior denoiser over a finite weighted atom corpus.

    Args:
        atoms: laid-out sequences, all with identical total length and
            condition length.
        weights: positive prior weight per atom; normalized internally.
        vocab: the shared vocabulary.
    """

    def __init__(
        self,
        atoms: Sequence[LayoutSeq],
        weights: Sequence[float],
        vocab: Vocab,
    ) -> None:
        if len(atoms) == 0:
            raise DomainError("oracle needs at least one atom")
        if len(weights) != len(atoms):
            raise DomainError(f"{len(weights)} weights for {len(atoms)} atoms")
        lens = {a.tokens.shape[0] for a in atoms}
        conds = {a.condition_len for a in atoms}
        if len(lens) != 1 or len(conds) != 1:
            raise DomainError("all atoms must share layout length and condition length")
        wts = np.asarray(weights, dtype=np.float64)
        if np.any(wts <= 0):
            raise DomainError("atom weights must be positive")
        self.vocab = vocab
        self.condition_len = atoms[0].condition_len
        self._matrix = np.stack([a.tokens for a in atoms])  # (n_atoms, L)
        if np.any(self._matrix == vocab.mask_id):
            raise DomainError("atoms must not contain mask tokens")
        self._weights = wts / wts.sum()

    def predict_grid(self, state: NoisyState) -> np.ndarray:
        if state.tokens.shape[0] != self._matrix.shape[1]:
            raise ContractError(
                f"state length {state.tokens.shape[0]} does not match atom "
                f"length {self._matrix.shape[1]}"
            )
        if state.condition_len != self.condition_len:
            raise ContractError(
                f"state condition_len {state.condition_len} does not match "
                f"atom condition_len {self.condition_len}"
            )
        query = state.tokens
        observed = query != state.mask_id
        compatible = np.all(
            (self._matrix[:, observed] == query[observed]), axis=1
        )
        post = np.where(compatible, self._weights, 0.0)
        total = post.sum()
        if total <= 0.0:
            raise SupportError("state is inconsistent with every corpus atom")
        post = post / total
        V = self.vocab.size
        Lt = state.target_len
        target_cols = self._matrix[:, self.condition_len :]
        probs = np.zeros((Lt, V), dtype=np.float64)
        for i in range(Lt):
            np.add.at(probs[i], target_cols[:, i], post)
        with np.errstate(divide="ignore"):
            grid = np.log(probs)
        return np.maximum(grid, LOG_ZERO)


def predict(
    denoiser: Denoiser,
    state: NoisyState,
    condition_tokens: np.ndarray,
) -> np.ndarray:
    """Log-probability grid over clean tokens for each target position.

    The state's condition region must equal ``condition_tokens``; the
    classifier-free-guidance machinery builds an explicit all-mask state
    for its unconditional pass rather than lying about the condition
    here. The output depends on the state only through its tokens, never
    through ``state.t``.
    """
    condition_tokens = np.asarray(condition_tokens, dtype=np.int64)
    if condition_tokens.shape[0] != state.condition_len:
        raise ContractError(
            f"condition length {condition_tokens.shape[0]} does not match "
            f"state condition_len {state.condition_len}"
        )
    if not np.array_equal(state.tokens[: state.condition_len], condition_tokens):
        raise ContractError("condition tokens do not match the state's condition region")
    return denoiser.predict_grid(state)


def oracle_posterior(
    oracle: OracleDenoiser,
    state: NoisyState,
    condition_tokens: np.ndarray,
) -> np.ndarray:
    """Exact Bayes posterior marginals; alias for :func:`predict` on an oracle."""
    return predict(oracle, state, condition_tokens)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path: str, arch: ArchConfig, params: np.ndarray) -> None:
    """Write a versioned checkpoint: magic, JSON header, raw float64 bytes.

    The byte stream is a pure function of ``arch`` and ``params`` (no
    timestamps), so identical runs produce identical files.
    """
    if params.shape != (arch.param_count,):
        raise ContractError(
            f"parameter vector of shape {params.shape} does not match "
            f"architecture count {arch.param_count}"
        )
    header = {
        "format_version": CHECKPOINT_VERSION,
        "arch": {
            "vocab_size": arch.vocab_size,
            "max_len": arch.max_len,
            "embed_dim": arch.embed_dim,
            "n_layers": arch.n_layers,
            "n_heads": arch.n_heads,
            "ff_dim": arch.ff_dim,
        },
        "dtype": "<f8",
        "param_count": int(params.shape[0]),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        fh.write(np.ascontiguousarray(params, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> tuple[ArchConfig, np.ndarray]:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Loading reproduces the parameter vector bit for bit; forward passes
    on the loaded vector therefore match the saved model exactly (on the
    same kernel backend).
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint file (bad magic)")
        n = int.from_bytes(fh.read(8), "little")
        try:
            header = json.loads(fh.read(n).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: corrupt checkpoint header: {exc}") from exc
        version = header.get("format_version")
        if version != CHECKPOINT_VERSION:
            raise FormatError(
                f"{path}: unsupported checkpoint format version {version!r} "
                f"(this build reads version {CHECKPOINT_VERSION})"
            )
        arch = ArchConfig(**header["arch"])
        raw = fh.read()
    params = np.frombuffer(raw, dtype=header["dtype"]).astype(np.float64)
    if params.shape[0] != header["param_count"] or params.shape[0] != arch.param_count:
        raise FormatError(
            f"{path}: checkpoint holds {params.shape[0]} parameters but the "
            f"header architecture implies {arch.param_count}"
        )
    return arch, params
