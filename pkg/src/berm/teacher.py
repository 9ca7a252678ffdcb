"""Teacher relevance scores: a precomputed score file or a synthetic oracle.

The synthetic oracle stands in for a fine-tuned cross-encoder. It knows the
latent category of every text in a synthetic world and scores a pair as

    sigmoid(CATEGORY_WEIGHT * m + OVERLAP_WEIGHT * jaccard + noise)

with ``m = +1`` for matching categories and ``-1`` otherwise, ``jaccard`` the
token-set overlap, and ``noise`` uniform in ``[-NOISE, NOISE]`` hashed from
``(seed, query, item)``. Identical non-empty token sets score exactly 1.0.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional

from .text import TokenSequence, Vocabulary, encode, tokenize

CATEGORY_WEIGHT = 4.0
OVERLAP_WEIGHT = 2.0
NOISE = 0.25


class MissingScoreError(KeyError):
    """The score file has no entry for a requested pair."""


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def hashed_uniform(seed: int, *parts: str) -> float:
    """Deterministic uniform draw in [0, 1) keyed on ``seed`` and ``parts``."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(seed).encode())
    for p in parts:
        h.update(b"\x1f")
        h.update(p.encode("utf-8"))
    return int.from_bytes(h.digest(), "big") / 2.0 ** 64


def synthetic_oracle(
    categories: Mapping[str, int],
    query: str,
    item: str,
    seed: int = 0,
    *,
    category_match: Optional[float] = None,
    noise: Optional[float] = None,
) -> float:
    """Score a pair from the planted categories of ``query`` and ``item``.

    ``categories`` maps each text to its latent category. ``category_match``
    and ``noise`` override the computed terms (used to probe the formula).
    """
    q_tokens, i_tokens = set(tokenize(query)), set(tokenize(item))
    if q_tokens and q_tokens == i_tokens and category_match is None and noise is None:
        return 1.0
    if category_match is None:
        category_match = 1.0 if categories[query] == categories[item] else -1.0
    union = q_tokens | i_tokens
    overlap = len(q_tokens & i_tokens) / len(union) if union else 0.0
    if noise is None:
        noise = (2.0 * hashed_uniform(seed, query, item) - 1.0) * NOISE
    return sigmoid(CATEGORY_WEIGHT * category_match + OVERLAP_WEIGHT * overlap + noise)


@dataclass
class TeacherScoreTable:
    """Pair scores from a file, or computed on demand by the synthetic oracle."""

    scores: dict[tuple[str, str], float] = field(default_factory=dict)
    provenance: str = "file"
    categories: Optional[Mapping[str, int]] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.provenance not in ("file", "synthetic"):
            raise ValueError("provenance must be 'file' or 'synthetic'")
        if self.provenance == "synthetic" and self.categories is None:
            raise ValueError("synthetic teacher needs the category map")
        for pair, y in self.scores.items():
            if not 0.0 <= y <= 1.0:
                raise ValueError(f"teacher score {y} for {pair} outside [0, 1]")

    @classmethod
    def synthetic(cls, categories: Mapping[str, int], seed: int = 0) -> "TeacherScoreTable":
        return cls({}, "synthetic", categories, seed)

    def score(self, query: str, item: str) -> float:
        if self.provenance == "synthetic":
            return synthetic_oracle(self.categories, query, item, self.seed)
        try:
            return self.scores[(query, item)]
        except KeyError:
            raise MissingScoreError((query, item)) from None

    __call__ = score

    def materialize(self, pairs: Iterable[tuple[str, str]]) -> "TeacherScoreTable":
        """A file-mode table holding the scores of ``pairs``."""
        return TeacherScoreTable({p: self.score(*p) for p in pairs}, "file")

    def get(self, pair: tuple[str, str], default=None):
        try:
            return self.score(*pair)
        except (MissingScoreError, KeyError):
            return default

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for (q, i), y in self.scores.items():
                fh.write(f"{q}\t{i}\t{y!r}\n")

    @classmethod
    def load(cls, path: str | Path) -> "TeacherScoreTable":
        scores: dict[tuple[str, str], float] = {}
        bad: list[int] = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                try:
                    if len(parts) != 3:
                        raise ValueError
                    y = float(parts[2])
                    if not 0.0 <= y <= 1.0:
                        raise ValueError
                except ValueError:
                    bad.append(lineno)
                    continue
                scores[(parts[0], parts[1])] = y
        if bad:
            raise ValueError(f"{path}: malformed teacher score lines {bad[:10]}")
        return cls(scores, "file")


@dataclass(frozen=True)
class TransferExample:
    query: str
    item: str
    label: float
    query_seq: Optional[TokenSequence] = None
    item_seq: Optional[TokenSequence] = None


def build_transfer_set(
    pairs: Iterable[tuple[str, str]],
    teacher: Callable[[str, str], float],
    vocab: Optional[Vocabulary] = None,
    l_q: int = 10,
    l_i: int = 65,
) -> list[TransferExample]:
    """Label each pair with its teacher score, keeping input order."""
    out = []
    for q, i in pairs:
        y = float(teacher(q, i))
        if not 0.0 <= y <= 1.0:
            raise ValueError(f"teacher score {y} outside [0, 1] for {(q, i)}")
        qs = encode(tokenize(q), vocab, l_q) if vocab is not None else None
        is_ = encode(tokenize(i), vocab, l_i) if vocab is not None else None
        out.append(TransferExample(q, i, y, qs, is_))
    return out
