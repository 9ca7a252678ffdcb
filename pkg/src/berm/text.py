"""Word segmentation, vocabulary and the shared word-embedding table.

Words are maximal runs of ASCII digits, maximal runs of ASCII letters
(lowercased) or single CJK ideographs. Everything else separates words.
Id 0 is reserved for padding and out-of-vocabulary words and always maps
to the zero embedding.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

PAD_ID = 0

_CJK_RANGES = ((0x3400, 0x4DBF), (0x4E00, 0x9FFF), (0xF900, 0xFAFF), (0x20000, 0x2A6DF))
_CJK = "".join(f"{chr(lo)}-{chr(hi)}" for lo, hi in _CJK_RANGES)
_WORD_RE = re.compile(rf"[0-9]+|[A-Za-z]+|[{_CJK}]")


def tokenize(raw: str) -> list[str]:
    """Split ``raw`` into digit runs, lowercased letter runs and CJK chars.

    >>> tokenize("mac pro 1.7GHz")
    ['mac', 'pro', '1', '7', 'ghz']
    """
    return [m.group(0).lower() for m in _WORD_RE.finditer(raw)]


@dataclass
class Vocabulary:
    """Frequency-filtered word -> id map with ids 1..n_w."""

    word_to_id: dict[str, int]
    counts: dict[str, int] = field(default_factory=dict)
    min_count: int = 1

    def __post_init__(self) -> None:
        ids = sorted(self.word_to_id.values())
        if ids != list(range(1, len(ids) + 1)):
            raise ValueError("vocabulary ids must be contiguous 1..n_w")

    @property
    def size(self) -> int:
        return len(self.word_to_id)

    def __len__(self) -> int:
        return len(self.word_to_id)

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_id

    def get(self, word: str) -> int:
        return self.word_to_id.get(word, PAD_ID)

    def words(self) -> list[str]:
        """Words ordered by id."""
        return sorted(self.word_to_id, key=self.word_to_id.__getitem__)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for word in self.words():
                fh.write(f"{word}\t{self.word_to_id[word]}\t{self.counts.get(word, 0)}\n")

    @classmethod
    def load(cls, path: str | Path, min_count: int = 1) -> "Vocabulary":
        word_to_id: dict[str, int] = {}
        counts: dict[str, int] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise ValueError(f"{path}:{lineno}: expected word<TAB>id<TAB>count")
                word, idx, count = parts
                word_to_id[word] = int(idx)
                counts[word] = int(count)
        return cls(word_to_id, counts, min_count)


def build_vocabulary(corpus: Iterable[str], min_count: int = 50) -> Vocabulary:
    """Keep words seen at least ``min_count`` times.

    Ids follow descending frequency, ties broken lexicographically, so the
    result does not depend on corpus order.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counter: Counter[str] = Counter()
    for raw in corpus:
        counter.update(tokenize(raw))
    kept = sorted((w for w, c in counter.items() if c >= min_count), key=lambda w: (-counter[w], w))
    return Vocabulary(
        {w: i for i, w in enumerate(kept, 1)},
        {w: counter[w] for w in kept},
        min_count,
    )


@dataclass(frozen=True)
class TokenSequence:
    """Word ids padded or truncated to exactly ``target_length``."""

    ids: tuple[int, ...]
    true_length: int

    @property
    def target_length(self) -> int:
        return len(self.ids)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.ids, dtype=np.int64)


def encode(tokens: list[str], vocab: Vocabulary, target_length: int) -> TokenSequence:
    if target_length < 1:
        raise ValueError("target_length must be >= 1")
    ids = [vocab.get(w) for w in tokens[:target_length]]
    true_length = len(ids)
    ids.extend([PAD_ID] * (target_length - true_length))
    return TokenSequence(tuple(ids), true_length)


class EmbeddingTable:
    """``(n_w + 1) x d`` matrix whose row 0 stays exactly zero."""

    def __init__(self, matrix: np.ndarray) -> None:
        matrix = np.array(matrix)
        if matrix.ndim != 2 or matrix.shape[0] < 1:
            raise ValueError("embedding matrix must be 2-D with at least the PAD row")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("embedding matrix has non-finite entries")
        matrix[PAD_ID] = 0.0
        self.matrix = matrix

    @classmethod
    def random(cls, n_words: int, d: int, rng: np.random.Generator,
               scale: float = 0.05, dtype=np.float32) -> "EmbeddingTable":
        m = rng.uniform(-scale, scale, size=(n_words + 1, d)).astype(dtype)
        return cls(m)

    @property
    def n_words(self) -> int:
        return self.matrix.shape[0] - 1

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    def row(self, idx: int) -> np.ndarray:
        return self.matrix[idx]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.matrix.copy())

    def save(self, path: str | Path, vocab: Vocabulary) -> None:
        """Write the plain-text format: ``n_w d`` header, then ``word f1 .. fd``."""
        if vocab.size != self.n_words:
            raise ValueError("vocabulary and table sizes differ")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{self.n_words} {self.d}\n")
            for word in vocab.words():
                vals = " ".join(repr(float(x)) for x in self.matrix[vocab.word_to_id[word]])
                fh.write(f"{word} {vals}\n")

    @classmethod
    def load(cls, path: str | Path, vocab: Vocabulary, dtype=np.float32) -> "EmbeddingTable":
        """Load an embedding file, placing rows by ``vocab`` ids.

        File words absent from ``vocab`` are skipped; vocab words absent from
        the file keep a zero row.
        """
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 2:
                raise ValueError(f"{path}:1: expected '<n_w> <d>' header")
            n_rows, d = int(header[0]), int(header[1])
            matrix = np.zeros((vocab.size + 1, d), dtype=dtype)
            seen = 0
            for lineno, line in enumerate(fh, 2):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != d + 1:
                    raise ValueError(f"{path}:{lineno}: expected word plus {d} floats")
                seen += 1
                idx = vocab.get(parts[0])
                if idx != PAD_ID:
                    matrix[idx] = np.asarray(parts[1:], dtype=np.float64)
        if seen != n_rows:
            raise ValueError(f"{path}: header declares {n_rows} rows, found {seen}")
        return cls(matrix)


def lookup(seq: TokenSequence | np.ndarray, table: EmbeddingTable) -> np.ndarray:
    """Rows of ``table`` for each id in ``seq``; padded ids give zero rows."""
    ids = seq.as_array() if isinstance(seq, TokenSequence) else np.asarray(seq, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() > table.n_words):
        raise IndexError(f"word id out of range [0, {table.n_words}]")
    return table.matrix[ids]
