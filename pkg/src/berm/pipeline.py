"""Glue from raw inputs to a trained scorer and its online distillate."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .bermo import BermOParameters, bermo_score_pairs, distill_bermo
from .data import LabeledPair, LogRecord, SyntheticWorld
from .evaluation import EvalReport, evaluate
from .graph import BipartiteGraph, behavioral_neighbor_fn, build_graph, refine_graph
from .model import BermParameters, ContextEncoder, score_pairs
from .teacher import TeacherScoreTable, TransferExample, build_transfer_set
from .text import Vocabulary, build_vocabulary
from .train import TrainConfig, TrainResult, train


@dataclass
class Prepared:
    vocab: Vocabulary
    raw_graph: BipartiteGraph
    graph: BipartiteGraph
    transfer: list[TransferExample]
    encoder: ContextEncoder
    test_pairs: list[tuple[str, str]]
    test_labels: np.ndarray


def make_encoder(vocab: Vocabulary, graph: BipartiteGraph, config: TrainConfig,
                 teacher: Optional[TeacherScoreTable] = None) -> ContextEncoder:
    """Encoder whose neighbor order follows ``config.neighbor_rank``."""
    if config.neighbor_rank == "score":
        if teacher is None:
            raise ValueError("score-based neighbor ranking needs teacher scores")
        fn = behavioral_neighbor_fn(graph, lam=config.lam, teacher_scores=teacher,
                                    behavior_kind=config.behavior_kind)
    else:
        fn = behavioral_neighbor_fn(graph)
    return ContextEncoder(vocab, graph, config.model_config(), fn)


def prepare(log: Sequence[LogRecord], teacher: Callable[[str, str], float],
            train_pairs: Sequence[tuple[str, str]], test_pairs: Sequence[LabeledPair],
            config: TrainConfig, *, vocab: Optional[Vocabulary] = None,
            graph: Optional[BipartiteGraph] = None) -> Prepared:
    """Vocabulary, refined graph, transfer set and encoder for one run.

    ``graph`` skips refinement when a refined snapshot is already at hand.
    """
    if vocab is None:
        vocab = build_vocabulary((t for pair in train_pairs for t in pair), config.min_count)
    raw = build_graph((r.query, r.item, r.behavior, r.count) for r in log)
    transfer = build_transfer_set(train_pairs, teacher)
    if graph is None:
        lookup = {(ex.query, ex.item): ex.label for ex in transfer}
        graph = refine_graph(raw, lambda q, i: lookup[(q, i)], config.alpha, config.beta, train_pairs,
                             lam=config.lam if config.neighbor_rank == "score" else 0.0,
                             behavior_kind=config.behavior_kind)
    table = teacher if isinstance(teacher, TeacherScoreTable) else None
    encoder = make_encoder(vocab, graph, config, table)
    return Prepared(vocab, raw, graph, transfer, encoder,
                    [(p.query, p.item) for p in test_pairs],
                    np.asarray([p.label for p in test_pairs], dtype=np.int64))


def prepare_world(world: SyntheticWorld, config: TrainConfig) -> Prepared:
    return prepare(world.behavior_log, world.teacher_table(), world.train_pairs,
                   world.test_pairs, config)


def fit(prepared: Prepared, config: TrainConfig, *, track_eval: bool = True) -> TrainResult:
    kwargs = {}
    if track_eval:
        kwargs = {"eval_pairs": prepared.test_pairs, "eval_labels": prepared.test_labels}
    return train(prepared.transfer, prepared.encoder, config, **kwargs)


def evaluate_berm(prepared: Prepared, params: BermParameters, threshold: float = 0.5) -> EvalReport:
    return evaluate(lambda pairs: score_pairs(pairs, prepared.encoder, params),
                    prepared.test_pairs, prepared.test_labels, threshold)


def evaluate_bermo(prepared: Prepared, params: BermOParameters, threshold: float = 0.5) -> EvalReport:
    return evaluate(lambda pairs: bermo_score_pairs(pairs, prepared.encoder, params),
                    prepared.test_pairs, prepared.test_labels, threshold)


def distill(prepared: Prepared, berm: BermParameters, config: TrainConfig) -> BermOParameters:
    pairs = [(ex.query, ex.item) for ex in prepared.transfer]
    params, _ = distill_bermo(berm, prepared.encoder, pairs, config)
    return params


def with_variant(config: TrainConfig, variant: str) -> TrainConfig:
    return replace(config, variant=variant)
