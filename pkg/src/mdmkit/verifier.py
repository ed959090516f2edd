"""Sentence embedding providers and the cosine reward.

The search layer scores a candidate sentence by embedding it and taking
the cosine similarity against the embedded input sentence. Three local
providers cover desk-scale work (a word-vector table, a seeded hashing
embedder, and a constant vector for tests); a remote HTTP provider
stands in for a real sentence-embedding model.

All local providers are pure bag-of-words maps from sentence text to a
fixed-dimension float64 vector. Degenerate sentences (no covered words,
empty text) embed to the zero vector, and the reward of a zero-norm
vector is defined as 0 rather than an error: the search must be able to
rank such candidates, not crash on them.
"""

from __future__ import annotations

import hashlib
import time
import warnings
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np
import requests

from .errors import DomainError, FormatError, ProtocolError

__all__ = [
    "WordVecTable",
    "Embedder",
    "WordVecEmbedder",
    "HashedEmbedder",
    "ConstantEmbedder",
    "RemoteEmbedder",
    "cosine_reward",
    "avg_wordvec_embed",
    "hashed_embed",
    "remote_embed",
    "load_wordvec_table",
    "write_wordvec_table",
]

_NORM_FLOOR = 1e-12


def cosine_reward(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; 0 if either vector has ~zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < _NORM_FLOOR or nb < _NORM_FLOOR:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


@dataclass(frozen=True)
class WordVecTable:
    """Word-to-vector map with a single shared dimension."""

    vectors: Mapping[str, np.ndarray]
    dim: int

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise DomainError(f"dimension must be >= 1, got {self.dim}")
        for word, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise DomainError(
                    f"vector for {word!r} has shape {vec.shape}, expected ({self.dim},)"
                )

    def __contains__(self, word: str) -> bool:
        return word in self.vectors

    def __getitem__(self, word: str) -> np.ndarray:
        return self.vectors[word]

    def __len__(self) -> int:
        return len(self.vectors)


def avg_wordvec_embed(sentence: str, table: WordVecTable) -> np.ndarray:
    """Mean vector of the covered words; zero vector if none are covered."""
    if len(table) == 0:
        raise DomainError("word-vector table is empty")
    hits = [table[w] for w in sentence.split() if w in table]
    if not hits:
        return np.zeros(table.dim, dtype=np.float64)
    return np.mean(hits, axis=0)


def _hashed_word_vector(word: str, d: int, seed: int) -> np.ndarray:
    # blake2b keyed by the seed, so vectors are stable across processes
    # (unlike hash(), which is salted per interpreter).
    digest = hashlib.blake2b(
        word.encode("utf-8"),
        digest_size=8,
        key=int(seed).to_bytes(8, "little", signed=False),
    ).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    vec = rng.standard_normal(d)
    norm = np.linalg.norm(vec)
    if norm < _NORM_FLOOR:
        vec = np.zeros(d)
        vec[int.from_bytes(digest, "little") % d] = 1.0
        return vec
    return vec / norm


def hashed_embed(sentence: str, d: int, seed: int = 0) -> np.ndarray:
    """Average of per-word pseudo-random unit vectors; order-free, dependency-free."""
    if d < 1:
        raise DomainError(f"dimension must be >= 1, got {d}")
    words = sentence.split()
    if not words:
        return np.zeros(d, dtype=np.float64)
    # summing in sorted order makes the bag-of-words average exactly
    # independent of word order, not just up to roundoff
    return np.mean([_hashed_word_vector(w, d, seed) for w in sorted(words)], axis=0)


class Embedder(Protocol):
    """Batch sentence embedder: n sentences in, an (n, dim) array out."""

    def embed(self, sentences: Sequence[str]) -> np.ndarray: ...


@dataclass(frozen=True)
class WordVecEmbedder:
    table: WordVecTable

    def embed(self, sentences: Sequence[str]) -> np.ndarray:
        return np.stack([avg_wordvec_embed(s, self.table) for s in sentences])


@dataclass(frozen=True)
class HashedEmbedder:
    dim: int
    seed: int = 0

    def embed(self, sentences: Sequence[str]) -> np.ndarray:
        return np.stack([hashed_embed(s, self.dim, self.seed) for s in sentences])


@dataclass(frozen=True)
class ConstantEmbedder:
    """Embeds every sentence to the same vector; a verifier that ranks nothing."""

    vector: np.ndarray

    def embed(self, sentences: Sequence[str]) -> np.ndarray:
        return np.tile(np.asarray(self.vector, dtype=np.float64), (len(sentences), 1))


def remote_embed(
    sentences: Sequence[str],
    endpoint: str,
    *,
    retries: int = 3,
    backoff: float = 0.25,
    timeout: float = 10.0,
    session: requests.Session | None = None,
) -> np.ndarray:
    """POST sentences to ``<endpoint>/embed`` and return the embeddings.

    Protocol: request body ``{"sentences": [...]}``; expected response
    ``{"embeddings": [[...], ...]}`` with one uniform-dimension vector
    per sentence, in order. 5xx responses and transport errors count as
    transient and are retried with exponential backoff; 4xx responses
    and malformed bodies are fatal immediately.
    """
    if retries < 0:
        raise DomainError(f"retries must be >= 0, got {retries}")
    url = endpoint.rstrip("/") + "/embed"
    post = (session or requests).post
    last: Exception | None = None
    for attempt in range(retries + 1):
        try:
            resp = post(url, json={"sentences": list(sentences)}, timeout=timeout)
        except requests.RequestException as exc:
            last = exc
        else:
            if 400 <= resp.status_code < 500:
                raise ProtocolError(
                    f"embedding endpoint rejected the request: HTTP {resp.status_code}"
                )
            if resp.status_code == 200:
                return _parse_embed_response(resp, len(sentences))
            last = ProtocolError(f"transient HTTP {resp.status_code} from {url}")
        if attempt < retries:
            time.sleep(backoff * (2.0**attempt))
    raise ProtocolError(
        f"embedding endpoint failed after {retries + 1} attempts: {last}"
    )


def _parse_embed_response(resp: requests.Response, expected: int) -> np.ndarray:
    try:
        body = resp.json()
        rows = body["embeddings"]
        out = np.asarray(rows, dtype=np.float64)
    except (ValueError, KeyError, TypeError) as exc:
        raise ProtocolError(f"malformed embedding response: {exc}") from exc
    if out.ndim != 2 or out.shape[0] != expected:
        raise ProtocolError(
            f"embedding response has shape {out.shape}, expected ({expected}, d): "
            "count mismatch or ragged dimensions"
        )
    if not np.all(np.isfinite(out)):
        raise ProtocolError("embedding response contains non-finite values")
    return out


@dataclass(frozen=True)
class RemoteEmbedder:
    endpoint: str
    retries: int = 3
    backoff: float = 0.25
    timeout: float = 10.0

    def embed(self, sentences: Sequence[str]) -> np.ndarray:
        return remote_embed(
            sentences,
            self.endpoint,
            retries=self.retries,
            backoff=self.backoff,
            timeout=self.timeout,
        )


def load_wordvec_table(path: str) -> WordVecTable:
    """Parse a text table of ``word v1 v2 ... vd`` lines.

    The first line fixes the dimension; later lines must agree or the
    loader fails with the offending line number. Duplicate words keep
    the last definition and emit a warning.
    """
    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            word, raw = parts[0], parts[1:]
            if not raw:
                raise FormatError(f"{path}: line {lineno}: no vector components")
            try:
                vec = np.asarray([float(x) for x in raw], dtype=np.float64)
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise FormatError(
                    f"{path}: line {lineno}: dimension {vec.shape[0]} != {dim}"
                )
            if word in vectors:
                warnings.warn(
                    f"{path}: line {lineno}: duplicate word {word!r}, last wins",
                    stacklevel=2,
                )
            vectors[word] = vec
    if dim is None:
        raise FormatError(f"{path}: empty word-vector file, dimension undeterminable")
    return WordVecTable(vectors=vectors, dim=dim)


def write_wordvec_table(table: WordVecTable, path: str) -> None:
    """Inverse of :func:`load_wordvec_table` (repr floats round-trip exactly)."""
    with open(path, "w", encoding="utf-8") as fh:
        for word in table.vectors:
            comps = " ".join(repr(float(x)) for x in table.vectors[word])
            fh.write(f"{word} {comps}\n")
