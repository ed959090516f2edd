"""Vocabulary, tokenization, sequence layout, and synthetic style corpora.

A training or decoding instance is a single flat token sequence

    [ y_1 ... y_C-1, <sep>, x_1 ... x_L, <pad> ... <pad> ]

where the *condition region* (the source sentence plus the trailing
separator) occupies the first ``condition_len`` positions and the
*target region* holds the output sentence, right-padded to a fixed
length. The condition region is never corrupted; ``<pad>`` inside the
target region is an ordinary predictable token, so fixed-length
generation also learns where the sentence ends.

Synthetic tasks are functional: every source maps to exactly one
target, which keeps exact-match evaluation meaningful. All generators
take an explicit ``numpy.random.Generator``; nothing in this module
touches global RNG state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, FormatError

__all__ = [
    "PAD_TOKEN",
    "MASK_TOKEN",
    "SEP_TOKEN",
    "UNK_TOKEN",
    "SPECIAL_TOKENS",
    "SYNTHETIC_TASKS",
    "Vocab",
    "PairExample",
    "LayoutSeq",
    "build_vocab",
    "read_vocab",
    "write_vocab",
    "tokenize",
    "detokenize",
    "layout",
    "gen_synthetic_task",
    "read_jsonl",
    "write_jsonl",
]

PAD_TOKEN = "<pad>"
MASK_TOKEN = "<mask>"
SEP_TOKEN = "<sep>"
UNK_TOKEN = "<unk>"

#: Reserved tokens, in id order: ids 0..3 in every vocabulary.
SPECIAL_TOKENS = (PAD_TOKEN, MASK_TOKEN, SEP_TOKEN, UNK_TOKEN)


@dataclass(frozen=True)
class Vocab:
    """Immutable token <-> id table with reserved special ids.

    ``tokens[i]`` is the string for id ``i``; the four special tokens
    always occupy ids 0..3 in the order pad, mask, sep, unk.
    """

    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        if tuple(self.tokens[:4]) != SPECIAL_TOKENS:
            raise DomainError(
                f"vocabulary must start with {SPECIAL_TOKENS}, got {self.tokens[:4]}"
            )
        if len(set(self.tokens)) != len(self.tokens):
            dupes = sorted({t for t in self.tokens if self.tokens.count(t) > 1})
            raise DomainError(f"duplicate tokens in vocabulary: {dupes}")
        object.__setattr__(
            self, "_index", {tok: i for i, tok in enumerate(self.tokens)}
        )

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def mask_id(self) -> int:
        return 1

    @property
    def sep_id(self) -> int:
        return 2

    @property
    def unk_id(self) -> int:
        return 3

    def id_of(self, token: str) -> int:
        """Id for ``token``, or the unk id when the token is unknown."""
        return self._index.get(token, self.unk_id)

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise DomainError(f"token id {token_id} outside vocabulary of size {self.size}")
        return self.tokens[token_id]


@dataclass(frozen=True)
class PairExample:
    """One style-transfer pair: tokenized source and target sentences."""

    source: tuple[str, ...]
    target: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.source) == 0 or len(self.target) == 0:
            raise DomainError("source and target must both be nonempty")


@dataclass(frozen=True, eq=False)
class LayoutSeq:
    """A laid-out instance: flat token ids plus the condition length.

    ``tokens[:condition_len]`` is the condition region (source then
    separator); ``tokens[condition_len:]`` is the target region,
    right-padded with the pad id.
    """

    tokens: np.ndarray
    condition_len: int

    @property
    def target_len(self) -> int:
        return int(self.tokens.shape[0]) - self.condition_len

    def condition_tokens(self) -> np.ndarray:
        return self.tokens[: self.condition_len]

    def target_tokens(self) -> np.ndarray:
        return self.tokens[self.condition_len :]


def build_vocab(examples: Iterable[PairExample]) -> Vocab:
    """Vocabulary over all words in ``examples``: specials then sorted words."""
    words: set[str] = set()
    for ex in examples:
        words.update(ex.source)
        words.update(ex.target)
    overlap = words & set(SPECIAL_TOKENS)
    if overlap:
        raise DomainError(f"corpus words collide with special tokens: {sorted(overlap)}")
    return Vocab(SPECIAL_TOKENS + tuple(sorted(words)))


def write_vocab(vocab: Vocab, path: str) -> None:
    """Write one token per line; the line index is the token id."""
    with open(path, "w", encoding="utf-8") as fh:
        for tok in vocab.tokens:
            fh.write(tok + "\n")


def read_vocab(path: str) -> Vocab:
    with open(path, encoding="utf-8") as fh:
        tokens = [line.rstrip("\n") for line in fh]
    while tokens and tokens[-1] == "":
        tokens.pop()
    if not tokens:
        raise FormatError(f"{path}: empty vocabulary file")
    return Vocab(tuple(tokens))


def tokenize(words: Sequence[str], vocab: Vocab) -> np.ndarray:
    """Map words to ids; unknown words map to the unk id."""
    return np.array([vocab.id_of(w) for w in words], dtype=np.int64)


def detokenize(token_ids: Sequence[int] | np.ndarray, vocab: Vocab) -> str:
    """Join tokens into a sentence, dropping pad, mask, and separator.

    The unk token is kept: it stands for a real (if unknown) word.
    """
    dropped = (vocab.pad_id, vocab.mask_id, vocab.sep_id)
    words = [vocab.token_of(int(i)) for i in token_ids if int(i) not in dropped]
    return " ".join(words)


def layout(
    pair: PairExample,
    vocab: Vocab,
    max_target_len: int,
    max_source_len: int | None = None,
) -> LayoutSeq:
    """Lay out one pair as ``[source, <sep>, target, <pad>...]``.

    The target region always has exactly ``max_target_len`` positions.
    Over-length sentences are rejected rather than truncated: silent
    truncation would break the functional source -> target guarantee.
    """
    if len(pair.target) > max_target_len:
        raise DomainError(
            f"target length {len(pair.target)} exceeds max_target_len {max_target_len}"
        )
    if max_source_len is not None and len(pair.source) > max_source_len:
        raise DomainError(
            f"source length {len(pair.source)} exceeds max_source_len {max_source_len}"
        )
    src = tokenize(pair.source, vocab)
    tgt = tokenize(pair.target, vocab)
    n_pad = max_target_len - len(tgt)
    tokens = np.concatenate(
        [
            src,
            np.array([vocab.sep_id], dtype=np.int64),
            tgt,
            np.full(n_pad, vocab.pad_id, dtype=np.int64),
        ]
    )
    return LayoutSeq(tokens=tokens, condition_len=len(src) + 1)


# ---------------------------------------------------------------------------
# Synthetic tasks
# ---------------------------------------------------------------------------

#: Content words shared by all three tasks.
_CONTENT_WORDS = (
    "cat", "dog", "bird", "fish", "tree", "stone", "river", "cloud",
    "house", "road", "light", "night", "day", "hand", "eye", "voice",
    "door", "wind", "fire", "water",
)

#: Bijective replacement dictionary for lexicon_swap (source -> target style).
LEXICON_SWAP_DICT = {
    "big": "large",
    "small": "tiny",
    "fast": "quick",
    "slow": "sluggish",
    "happy": "glad",
    "sad": "gloomy",
    "old": "ancient",
    "new": "fresh",
}

#: Marked modifier words deleted by drop_modifiers.
MODIFIER_WORDS = ("very", "quite", "really", "rather", "extremely", "somewhat")

SYNTHETIC_TASKS = ("lexicon_swap", "drop_modifiers", "case_style")


def _gen_lexicon_swap(rng: np.random.Generator, max_len: int) -> PairExample:
    # Sentences mix plain content words with swap-dictionary keys; the
    # target substitutes every key and copies everything else, so source
    # and target lengths match and most tokens are shared.
    keys = tuple(LEXICON_SWAP_DICT)
    n = int(rng.integers(3, max_len + 1))
    source = []
    for _ in range(n):
        if rng.random() < 0.35:
            source.append(keys[int(rng.integers(len(keys)))])
        else:
            source.append(_CONTENT_WORDS[int(rng.integers(len(_CONTENT_WORDS)))])
    target = [LEXICON_SWAP_DICT.get(w, w) for w in source]
    return PairExample(tuple(source), tuple(target))


def _gen_drop_modifiers(rng: np.random.Generator, max_len: int) -> PairExample:
    # Content words, each optionally preceded by a marked modifier; the
    # target deletes the modifiers, so alignment shifts by the number of
    # modifiers dropped so far.
    max_content = max(3, max_len // 2)
    n = int(rng.integers(3, max_content + 1))
    source: list[str] = []
    target: list[str] = []
    for _ in range(n):
        if len(source) + 2 <= max_len and rng.random() < 0.4:
            source.append(MODIFIER_WORDS[int(rng.integers(len(MODIFIER_WORDS)))])
        word = _CONTENT_WORDS[int(rng.integers(len(_CONTENT_WORDS)))]
        source.append(word)
        target.append(word)
    return PairExample(tuple(source), tuple(target))


def _gen_case_style(rng: np.random.Generator, max_len: int) -> PairExample:
    # Two disjoint sub-vocabularies related by a per-token bijection:
    # lowercase content words and their uppercase counterparts.
    n = int(rng.integers(3, max_len + 1))
    source = [_CONTENT_WORDS[int(rng.integers(len(_CONTENT_WORDS)))] for _ in range(n)]
    target = [w.upper() for w in source]
    return PairExample(tuple(source), tuple(target))


def gen_synthetic_task(
    name: str,
    size: int,
    rng: np.random.Generator,
    max_len: int = 12,
) -> list[PairExample]:
    """Generate ``size`` pairs for the named task.

    Args:
        name: one of ``lexicon_swap``, ``drop_modifiers``, ``case_style``.
        size: number of pairs; must be >= 1.
        rng: seeded generator; the corpus is a deterministic function of it.
        max_len: upper bound on source sentence length (and hence target
            length, which never exceeds the source for these tasks).

    Returns:
        List of ``PairExample``. Pairs may repeat; dedup is the caller's
        choice.
    """
    if size < 1:
        raise DomainError(f"size must be >= 1, got {size}")
    if max_len < 3:
        raise DomainError(f"max_len must be >= 3, got {max_len}")
    gens = {
        "lexicon_swap": _gen_lexicon_swap,
        "drop_modifiers": _gen_drop_modifiers,
        "case_style": _gen_case_style,
    }
    if name not in gens:
        raise DomainError(f"unknown task {name!r}; expected one of {SYNTHETIC_TASKS}")
    gen = gens[name]
    return [gen(rng, max_len) for _ in range(size)]


# ---------------------------------------------------------------------------
# Dataset files
# ---------------------------------------------------------------------------


def write_jsonl(examples: Iterable[PairExample], path: str) -> None:
    """Write one ``{"source": ..., "target": ...}`` object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(
                json.dumps(
                    {"source": " ".join(ex.source), "target": " ".join(ex.target)},
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_jsonl(path: str) -> list[PairExample]:
    """Read a dataset written by :func:`write_jsonl`.

    Blank lines are rejected, not skipped: a blank line in a dataset is
    evidence of a broken writer. Errors name the 1-based line number.
    """
    out: list[PairExample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict) or "source" not in obj or "target" not in obj:
                raise FormatError(
                    f"{path}: line {lineno}: expected object with 'source' and 'target'"
                )
            source = tuple(str(obj["source"]).split())
            target = tuple(str(obj["target"]).split())
            if not source or not target:
                raise FormatError(f"{path}: line {lineno}: empty source or target")
            out.append(PairExample(source, target))
    return out
