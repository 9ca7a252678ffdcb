"""Dataset files, human-label binarization and a synthetic search world.

The synthetic world plants latent categories. Each category owns a few
marker words; queries always carry markers, while only a fraction of item
titles do (the rest use generic words only, so their relevance can only be
read off the behavior graph). Users click mostly same-category items, with
a configurable share of cross-category noise clicks, and purchase only
same-category items.
"""

from __future__ import annotations

import string
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .graph import BEHAVIORS, CLICK, PURCHASE
from .teacher import TeacherScoreTable

BEHAVIOR_LOG = "behavior_log.tsv"
TEACHER_SCORES = "teacher_scores.tsv"
TRAIN_PAIRS = "train_pairs.tsv"
TEST_PAIRS = "test_pairs.tsv"


class ParseError(ValueError):
    def __init__(self, path, bad_lines: list[tuple[int, str]]) -> None:
        detail = "; ".join(f"line {n}: {why}" for n, why in bad_lines[:10])
        super().__init__(f"{path}: {len(bad_lines)} malformed line(s): {detail}")
        self.bad_lines = bad_lines


def binarize(raw_score: int) -> int:
    """Human relevance grade 1..5 -> 1 for grades 4 and 5, else 0."""
    if isinstance(raw_score, bool) or int(raw_score) != raw_score or not 1 <= raw_score <= 5:
        raise ValueError(f"raw relevance score must be an integer in 1..5, got {raw_score!r}")
    return 1 if raw_score >= 4 else 0


@dataclass(frozen=True)
class LabeledPair:
    query: str
    item: str
    label: int
    raw_score: Optional[int] = None

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")
        if self.raw_score is not None and binarize(self.raw_score) != self.label:
            raise ValueError(f"label {self.label} disagrees with raw score {self.raw_score}")


@dataclass(frozen=True)
class LogRecord:
    query: str
    item: str
    behavior: str
    count: int


def _read_tsv(path, n_cols: int, convert):
    out, bad = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != n_cols:
                bad.append((lineno, f"expected {n_cols} columns, got {len(parts)}"))
                continue
            try:
                out.append(convert(parts))
            except ValueError as exc:
                bad.append((lineno, str(exc)))
    if bad:
        raise ParseError(path, bad)
    return out


def _log_record(parts: list[str]) -> LogRecord:
    q, i, behavior, count = parts
    if behavior not in BEHAVIORS:
        raise ValueError(f"unknown behavior {behavior!r}")
    n = int(count)
    if n < 1:
        raise ValueError("count must be >= 1")
    return LogRecord(q, i, behavior, n)


def load_behavior_log(path) -> list[LogRecord]:
    return _read_tsv(path, 4, _log_record)


def save_behavior_log(records: Iterable[LogRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(f"{r.query}\t{r.item}\t{r.behavior}\t{r.count}\n")


def load_labeled_pairs(path) -> list[LabeledPair]:
    def convert(parts):
        raw = int(parts[2])
        return LabeledPair(parts[0], parts[1], binarize(raw), raw)
    return _read_tsv(path, 3, convert)


def save_labeled_pairs(pairs: Iterable[LabeledPair], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            if p.raw_score is None:
                raise ValueError("saving needs raw 1..5 scores")
            fh.write(f"{p.query}\t{p.item}\t{p.raw_score}\n")


def load_pairs(path) -> list[tuple[str, str]]:
    return _read_tsv(path, 2, tuple)


def save_pairs(pairs: Iterable[tuple[str, str]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q, i in pairs:
            fh.write(f"{q}\t{i}\n")


# ---------------------------------------------------------------------------
# Synthetic world
# ---------------------------------------------------------------------------

@dataclass
class SyntheticWorldConfig:
    n_categories: int = 8
    queries_per_category: int = 25
    test_queries_per_category: int = 5
    items_per_category: int = 30
    query_tokens: int = 3
    item_tokens: int = 6
    click_noise: float = 0.1
    purchase_rate: float = 0.3
    clicks_per_query: int = 4
    impressions_per_query: int = 6
    test_items_per_query: int = 10
    item_marker_rate: float = 0.9
    markers_per_category: int = 4
    generic_words: int = 60
    seed: int = 0

    def __post_init__(self) -> None:
        counts = ("n_categories", "queries_per_category", "test_queries_per_category",
                  "items_per_category", "query_tokens", "item_tokens", "clicks_per_query",
                  "test_items_per_query", "markers_per_category", "generic_words")
        for name in counts:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.impressions_per_query < 0:
            raise ValueError("impressions_per_query must be >= 0")
        for name in ("click_noise", "purchase_rate", "item_marker_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.n_categories < 2 and (self.click_noise > 0 or self.impressions_per_query or
                                      self.test_items_per_query > 1):
            raise ValueError("need at least two categories for negatives")
        if self.query_tokens < 2 or self.item_tokens < 2:
            raise ValueError("texts need at least two tokens")


# Noisy clicks and mostly unmarked item titles: relevance of most items can
# only be recovered from who clicked and bought them.
CONTEXT_WORLD = {"click_noise": 0.3, "item_marker_rate": 0.3, "generic_words": 20}


@dataclass
class SyntheticWorld:
    config: SyntheticWorldConfig
    categories: dict[str, int]
    behavior_log: list[LogRecord]
    train_pairs: list[tuple[str, str]]
    test_pairs: list[LabeledPair]
    train_queries: list[str] = field(default_factory=list)
    test_queries: list[str] = field(default_factory=list)
    items: list[str] = field(default_factory=list)

    def teacher(self) -> TeacherScoreTable:
        return TeacherScoreTable.synthetic(self.categories, self.config.seed)

    def teacher_table(self) -> TeacherScoreTable:
        """File-mode teacher scores covering every training pair."""
        return self.teacher().materialize(self.train_pairs)

    def relevant(self, query: str, item: str) -> bool:
        return self.categories[query] == self.categories[item]

    def save(self, directory) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = [d / BEHAVIOR_LOG, d / TEACHER_SCORES, d / TRAIN_PAIRS, d / TEST_PAIRS]
        save_behavior_log(self.behavior_log, paths[0])
        self.teacher_table().save(paths[1])
        save_pairs(self.train_pairs, paths[2])
        save_labeled_pairs(self.test_pairs, paths[3])
        return paths


def _word(n: int) -> str:
    """Distinct letters-only pseudo-word for each n >= 0."""
    letters = string.ascii_lowercase
    out = ""
    n += 26 * 27  # at least three letters
    while n:
        n, r = divmod(n, 26)
        out = letters[r] + out
    return out


def generate_world(config: SyntheticWorldConfig) -> SyntheticWorld:
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    C = cfg.n_categories
    markers = [[_word(c * cfg.markers_per_category + j) for j in range(cfg.markers_per_category)]
               for c in range(C)]
    generic = [_word(C * cfg.markers_per_category + j) for j in range(cfg.generic_words)]
    categories: dict[str, int] = {}

    def fresh_text(category: int, n_tokens: int, marked: bool) -> str:
        for _ in range(1000):
            n_mark = min(2, n_tokens - 1) if marked else 0
            words = list(rng.choice(markers[category], size=min(n_mark, len(markers[category])),
                                    replace=False)) if n_mark else []
            words += list(rng.choice(generic, size=n_tokens - len(words), replace=False))
            text = " ".join(str(w) for w in words)
            if text not in categories:
                categories[text] = category
                return text
        raise RuntimeError("could not draw a fresh text; enlarge the word pools")

    items = [[fresh_text(c, cfg.item_tokens, rng.random() < cfg.item_marker_rate)
              for _ in range(cfg.items_per_category)] for c in range(C)]
    train_q = [[fresh_text(c, cfg.query_tokens, True) for _ in range(cfg.queries_per_category)]
               for c in range(C)]
    test_q = [[fresh_text(c, cfg.query_tokens, True) for _ in range(cfg.test_queries_per_category)]
              for c in range(C)]
    all_items = [i for group in items for i in group]

    def other_item(c: int) -> str:
        oc = int(rng.integers(C - 1))
        oc += oc >= c
        return items[oc][int(rng.integers(cfg.items_per_category))]

    def same_item(c: int) -> str:
        return items[c][int(rng.integers(cfg.items_per_category))]

    log: list[LogRecord] = []
    train_pairs: list[tuple[str, str]] = []
    for c in range(C):
        for q in train_q[c]:
            seen: set[str] = set()
            for _ in range(cfg.clicks_per_query):
                noisy = rng.random() < cfg.click_noise
                for _ in range(100):
                    item = other_item(c) if noisy else same_item(c)
                    if item not in seen:
                        break
                else:
                    continue
                seen.add(item)
                clicks = int(rng.integers(1, 4)) if noisy else int(rng.integers(1, 11))
                log.append(LogRecord(q, item, CLICK, clicks))
                train_pairs.append((q, item))
                if not noisy and rng.random() < cfg.purchase_rate:
                    log.append(LogRecord(q, item, PURCHASE, int(rng.integers(1, 3))))
            for j in range(cfg.impressions_per_query):
                for _ in range(100):
                    item = same_item(c) if j % 2 == 0 else other_item(c)
                    if item not in seen:
                        break
                else:
                    continue
                seen.add(item)
                train_pairs.append((q, item))

    test_pairs: list[LabeledPair] = []
    for c in range(C):
        for q in test_q[c]:
            seen = set()
            for j in range(cfg.test_items_per_query):
                for _ in range(100):
                    item = same_item(c) if j % 2 == 0 else other_item(c)
                    if item not in seen:
                        break
                else:
                    continue
                seen.add(item)
                rel = categories[item] == c
                raw = int(rng.integers(4, 6)) if rel else int(rng.integers(1, 4))
                test_pairs.append(LabeledPair(q, item, int(rel), raw))

    return SyntheticWorld(cfg, categories, log, train_pairs, test_pairs,
                          [q for g in train_q for q in g], [q for g in test_q for q in g], all_items)
