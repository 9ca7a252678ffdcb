"""The online model: a two-layer network over the two sentence embeddings.

It sees only ``[macro(query) | macro(item)]`` and learns to reproduce the
graph-aware scorer's outputs, so its cost does not depend on sentence length
or on the behavior graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .graph import ITEM, QUERY
from .model import (BermParameters, ContextEncoder, MulCounter, _matmul, _scale, read_checkpoint,
                    score_pairs, sigmoid, write_matrices)
from .text import EmbeddingTable, TokenSequence
from .train import AdamState, GradientSet, TrainConfig, lazy_adam_step, loss


@dataclass(frozen=True)
class BermOConfig:
    d: int
    l_q: int
    l_i: int
    h3: int = 64


@dataclass
class BermOParameters:
    config: BermOConfig
    embedding: EmbeddingTable
    weights: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        d, h = self.config.d, self.config.h3
        expected = {"V0": (2 * d, h), "c0": (1, h), "V1": (h, 1), "c1": (1, 1)}
        if h < 1:
            raise ValueError("h3 must be >= 1")
        if set(self.weights) != set(expected):
            raise ValueError(f"expected tensors {sorted(expected)}")
        for name, shape in expected.items():
            if self.weights[name].shape != shape:
                raise ValueError(f"{name} has shape {self.weights[name].shape}, expected {shape}")
        if self.embedding.d != d:
            raise ValueError("embedding width differs from config.d")

    @classmethod
    def init(cls, config: BermOConfig, embedding: EmbeddingTable,
             rng: np.random.Generator) -> "BermOParameters":
        dtype = embedding.matrix.dtype
        d, h = config.d, config.h3
        lim0 = np.sqrt(6.0 / (2 * d + h))
        lim1 = np.sqrt(6.0 / (h + 1))
        return cls(config, embedding, {
            "V0": rng.uniform(-lim0, lim0, size=(2 * d, h)).astype(dtype),
            "c0": np.zeros((1, h), dtype=dtype),
            "V1": rng.uniform(-lim1, lim1, size=(h, 1)).astype(dtype),
            "c1": np.zeros((1, 1), dtype=dtype),
        })


def sentence_features(q_ids, q_len, i_ids, i_len, table: np.ndarray,
                      counter: Optional[MulCounter] = None) -> np.ndarray:
    """``[macro(query) | macro(item)]`` rows for a batch of encoded pairs."""
    dtype = table.dtype
    mq = _scale(table[q_ids].sum(axis=1), (1.0 / np.maximum(q_len, 1)).astype(dtype)[:, None], counter)
    mi = _scale(table[i_ids].sum(axis=1), (1.0 / np.maximum(i_len, 1)).astype(dtype)[:, None], counter)
    return np.concatenate([mq, mi], axis=1)


def _head(x: np.ndarray, W: dict[str, np.ndarray], counter: Optional[MulCounter] = None):
    hidden = np.maximum(_matmul(x, W["V0"], counter) + W["c0"], 0.0)
    z = (_matmul(hidden, W["V1"], counter) + W["c1"])[:, 0]
    return sigmoid(z), hidden


def bermo_forward(q: TokenSequence, i: TokenSequence, params: BermOParameters,
                  counter: Optional[MulCounter] = None) -> float:
    x = sentence_features(q.as_array()[None], np.array([q.true_length]),
                          i.as_array()[None], np.array([i.true_length]),
                          params.embedding.matrix, counter)
    return float(_head(x, params.weights, counter)[0][0])


def bermo_score_pairs(pairs: Sequence[tuple[str, str]], encoder: ContextEncoder,
                      params: BermOParameters) -> np.ndarray:
    x = _features_for(pairs, encoder, params.embedding.matrix)
    return _head(x, params.weights)[0].astype(np.float64)


def _features_for(pairs, encoder: ContextEncoder, table: np.ndarray) -> np.ndarray:
    qs = [encoder.sequence(QUERY, q) for q, _ in pairs]
    its = [encoder.sequence(ITEM, i) for _, i in pairs]
    return sentence_features(np.array([s.ids for s in qs]), np.array([s.true_length for s in qs]),
                             np.array([s.ids for s in its]), np.array([s.true_length for s in its]),
                             table)


def distill_bermo(berm: BermParameters, encoder: ContextEncoder,
                  pairs: Sequence[tuple[str, str]], config: TrainConfig,
                  targets: Optional[np.ndarray] = None) -> tuple[BermOParameters, list[float]]:
    """Fit the online model to the graph-aware scorer's outputs on ``pairs``.

    The embedding table is a frozen copy of ``berm``'s. ``targets`` overrides
    the teacher outputs (by default, ``berm`` scored with its graph context).
    Returns the parameters and the per-epoch mean loss.
    """
    if not pairs:
        raise ValueError("no pairs to distill on")
    if targets is None:
        targets = score_pairs(pairs, encoder, berm)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (len(pairs),):
        raise ValueError("one target per pair required")
    rng = np.random.default_rng(config.seed + 1)
    bcfg = BermOConfig(berm.config.d, berm.config.l_q, berm.config.l_i, config.h3)
    params = BermOParameters.init(bcfg, berm.embedding.copy(), rng)
    x = _features_for(pairs, encoder, params.embedding.matrix)
    state = AdamState(config.lr, config.beta1, config.beta2, config.eps, config.l2, config.l2_biases)
    W = params.weights
    history = []
    for _ in range(config.distill_epochs):
        order = rng.permutation(len(pairs))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            y_hat, hidden = _head(x[idx], W)
            total += loss(y_hat, targets[idx])
            dz = (y_hat - targets[idx]).astype(W["V1"].dtype)[:, None]
            dh = (dz @ W["V1"].T) * (hidden > 0)
            grads = GradientSet({"V1": hidden.T @ dz, "c1": dz.sum(axis=0, keepdims=True),
                                 "V0": x[idx].T @ dh, "c0": dh.sum(axis=0, keepdims=True)})
            lazy_adam_step(state, grads, W, scale=1.0 / len(idx))
        history.append(total / len(pairs))
    return params, history


def save_bermo(params: BermOParameters, path) -> None:
    cfg = params.config
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("kind = bermo\n")
        fh.write(f"dtype = {np.dtype(params.embedding.matrix.dtype).name}\n")
        fh.write(f"d = {cfg.d}\nl_q = {cfg.l_q}\nl_i = {cfg.l_i}\nh3 = {cfg.h3}\n")
        write_matrices(fh, {"embedding": params.embedding.matrix, **params.weights})


def load_bermo(path) -> BermOParameters:
    header, tensors = read_checkpoint(path)
    if header.get("kind") != "bermo":
        raise ValueError(f"{path}: not a BERM-O checkpoint (kind={header.get('kind')})")
    cfg = BermOConfig(int(header["d"]), int(header["l_q"]), int(header["l_i"]), int(header["h3"]))
    embedding = EmbeddingTable(tensors.pop("embedding"))
    return BermOParameters(cfg, embedding, tensors)
