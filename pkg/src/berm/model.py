"""The graph-context relevance scorer.

A query/item pair is scored from

* macro embeddings: mean word embedding of each sentence,
* the micro embedding: the row-major flattened word-by-word dot-product
  matrix between query and item,
* two metapath embeddings (Q-I-Q around the query, I-Q-I around the item):
  each of the ``b**k`` metapath instances is the mean of its node macro
  embeddings (null slots count as zero vectors), instances are combined with
  a softmax attention computed from ``[macro_q | macro_i | instances...]``
  and passed through LeakyReLU,

followed by three ReLU layers and a sigmoid.

Everything is computed in batches with a leading batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .graph import (ITEM, QUERY, BipartiteGraph, MetapathInstance, NeighborFn, other_type,
                    behavioral_neighbor_fn, enumerate_metapath_instances, padded_instances)
from .text import EmbeddingTable, TokenSequence, Vocabulary, encode, tokenize

SIDES = ("qiq", "iqi")


@dataclass(frozen=True)
class AblationVariant:
    use_macro: bool = True
    use_micro: bool = True
    use_metapath: bool = True
    use_intermediate_node: bool = True

    def __post_init__(self) -> None:
        if not (self.use_macro or self.use_micro or self.use_metapath):
            raise ValueError("variant must keep at least one of macro, micro, metapath")

    @property
    def name(self) -> str:
        parts = [n for n, on in (("macro", self.use_macro), ("micro", self.use_micro),
                                 ("metapath", self.use_metapath)) if on]
        label = "+".join(parts)
        if self.use_metapath and not self.use_intermediate_node:
            label += "-nointermediate"
        return label

    @classmethod
    def from_name(cls, name: str) -> "AblationVariant":
        if name in ("full", "berm"):
            return cls()
        intermediate = not name.endswith("-nointermediate")
        parts = set(name.removesuffix("-nointermediate").split("+"))
        unknown = parts - {"macro", "micro", "metapath"}
        if unknown:
            raise ValueError(f"unknown variant component(s) {sorted(unknown)}")
        return cls("macro" in parts, "micro" in parts, "metapath" in parts, intermediate)


# The seven component combinations of the ablation table, full model last.
ABLATION_VARIANTS = (
    AblationVariant(True, False, False),
    AblationVariant(False, True, False),
    AblationVariant(False, False, True),
    AblationVariant(True, True, False),
    AblationVariant(False, True, True),
    AblationVariant(True, False, True),
    AblationVariant(True, True, True),
)


@dataclass(frozen=True)
class ModelConfig:
    d: int = 128
    l_q: int = 10
    l_i: int = 65
    k: int = 2
    b: int = 2
    variant: AblationVariant = AblationVariant()
    slope: float = 0.2
    positional: bool = False

    def __post_init__(self) -> None:
        for name in ("d", "l_q", "l_i", "k", "b"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def n_instances(self) -> int:
        return self.b ** self.k

    @property
    def fusion_width(self) -> int:
        v = self.variant
        return (2 * self.d * v.use_macro + self.l_q * self.l_i * v.use_micro
                + 2 * self.d * v.use_metapath)

    def slot_weights(self) -> np.ndarray:
        """Weight of each instance position in the node-level mean."""
        w = np.ones(self.k + 1)
        if not self.variant.use_intermediate_node:
            w[1::2] = 0.0
        return w / w.sum()


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, n = config.d, config.n_instances
    shapes: dict[str, tuple[int, ...]] = {}
    if config.variant.use_metapath:
        for side in SIDES:
            shapes[f"W_att_{side}"] = ((2 + n) * d, n)
            shapes[f"b_att_{side}"] = (1, n)
    shapes.update({
        "W0": (config.fusion_width, d), "b0": (1, d),
        "W1": (d, d), "b1": (1, d),
        "W2": (d, d), "b2": (1, d),
        "W3": (d, 1), "b3": (1, 1),
    })
    return shapes


def is_weight(name: str) -> bool:
    return name.startswith("W")


@dataclass
class BermParameters:
    config: ModelConfig
    embedding: EmbeddingTable
    weights: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        expected = parameter_shapes(self.config)
        if set(expected) != set(self.weights):
            raise ValueError(f"parameter names {sorted(self.weights)} != {sorted(expected)}")
        for name, shape in expected.items():
            if self.weights[name].shape != shape:
                raise ValueError(f"{name} has shape {self.weights[name].shape}, expected {shape}")
        if self.embedding.d != self.config.d:
            raise ValueError("embedding width differs from config.d")

    @classmethod
    def init(cls, config: ModelConfig, n_words: int, rng: np.random.Generator,
             dtype=np.float32, embedding: Optional[EmbeddingTable] = None) -> "BermParameters":
        """Glorot-uniform weights, zero biases, uniform(+-0.05) embeddings."""
        if embedding is None:
            embedding = EmbeddingTable.random(n_words, config.d, rng, dtype=dtype)
        weights = {}
        for name, shape in parameter_shapes(config).items():
            if is_weight(name):
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                weights[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
            else:
                weights[name] = np.zeros(shape, dtype=dtype)
        return cls(config, embedding, weights)

    @property
    def dtype(self):
        return self.embedding.matrix.dtype

    def astype(self, dtype) -> "BermParameters":
        return BermParameters(self.config, EmbeddingTable(self.embedding.matrix.astype(dtype)),
                              {n: w.astype(dtype) for n, w in self.weights.items()})

    def copy(self) -> "BermParameters":
        return self.astype(self.dtype)

    def tensors(self) -> dict[str, np.ndarray]:
        """All trainable arrays, embedding included, in declaration order."""
        return {"embedding": self.embedding.matrix, **self.weights}


# ---------------------------------------------------------------------------
# Inputs
# ---------------------------------------------------------------------------

@dataclass
class PairBatch:
    """Encoded pairs plus their metapath context.

    ``nodes`` holds every distinct sentence touched by the batch (anchors
    and graph neighbors). ``slots[side]`` has shape ``(B, b**k, k+1)`` and
    indexes rows of ``nodes``; the value ``len(nodes)`` marks a null slot.
    """

    q_ids: np.ndarray
    q_len: np.ndarray
    i_ids: np.ndarray
    i_len: np.ndarray
    node_ids: np.ndarray
    node_len: np.ndarray
    slots: dict[str, np.ndarray]

    @property
    def size(self) -> int:
        return self.q_ids.shape[0]

    @property
    def null_slot(self) -> int:
        return self.node_ids.shape[0]

    def word_ids(self) -> np.ndarray:
        """Every non-PAD word id the batch reads."""
        ids = np.concatenate([self.q_ids.ravel(), self.i_ids.ravel(), self.node_ids.ravel()])
        ids = np.unique(ids)
        return ids[ids != 0]


class ContextEncoder:
    """Turns (query, item) text pairs into :class:`PairBatch` inputs.

    Instance lists are memoized per anchor; the graph must not change after
    the encoder is built.
    """

    def __init__(self, vocab: Vocabulary, graph: Optional[BipartiteGraph], config: ModelConfig,
                 neighbor_fn: Optional[NeighborFn] = None) -> None:
        self.vocab = vocab
        self.graph = graph if graph is not None else BipartiteGraph()
        self.config = config
        self.neighbor_fn = neighbor_fn or behavioral_neighbor_fn(self.graph)
        self._seq: dict[tuple[str, str], TokenSequence] = {}
        self._inst: dict[tuple[str, str], list[tuple[Optional[str], ...]]] = {}

    def sequence(self, node_type: str, text: str) -> TokenSequence:
        key = (node_type, text)
        seq = self._seq.get(key)
        if seq is None:
            length = self.config.l_q if node_type == QUERY else self.config.l_i
            seq = self._seq[key] = encode(tokenize(text), self.vocab, length)
        return seq

    def instances(self, node_type: str, text: str) -> list[MetapathInstance]:
        k, b = self.config.k, self.config.b
        anchor = self.graph.node_id(node_type, text)
        if anchor is None:
            return padded_instances(node_type, None, k, b)
        return enumerate_metapath_instances(self.graph, node_type, anchor, k, b, self.neighbor_fn)

    def _instance_texts(self, node_type: str, text: str) -> list[tuple[Optional[str], ...]]:
        """Instances as node texts; position 0 is always the anchor text."""
        key = (node_type, text)
        cached = self._inst.get(key)
        if cached is None:
            cached = []
            for inst in self.instances(node_type, text):
                row: list[Optional[str]] = [text]
                for pos, node in enumerate(inst.nodes[1:], 1):
                    row.append(None if node is None
                               else self.graph.node_text(inst.node_type(pos), node))
                cached.append(tuple(row))
            self._inst[key] = cached
        return cached

    def encode_pairs(self, pairs: Sequence[tuple[str, str]]) -> PairBatch:
        cfg = self.config
        B, n, k = len(pairs), cfg.n_instances, cfg.k
        q_ids = np.zeros((B, cfg.l_q), dtype=np.int64)
        i_ids = np.zeros((B, cfg.l_i), dtype=np.int64)
        q_len = np.zeros(B, dtype=np.int64)
        i_len = np.zeros(B, dtype=np.int64)
        node_index: dict[tuple[str, str], int] = {}
        node_seqs: list[TokenSequence] = []
        slots = {side: np.zeros((B, n, k + 1), dtype=np.int64) for side in SIDES}
        pending: dict[str, list[tuple[int, int, int, Optional[tuple[str, str]]]]] = {s: [] for s in SIDES}

        for row, (query, item) in enumerate(pairs):
            qs, is_ = self.sequence(QUERY, query), self.sequence(ITEM, item)
            q_ids[row], q_len[row] = qs.ids, qs.true_length
            i_ids[row], i_len[row] = is_.ids, is_.true_length
            if not cfg.variant.use_metapath:
                continue
            for side, anchor_type, anchor in (("qiq", QUERY, query), ("iqi", ITEM, item)):
                for j, texts in enumerate(self._instance_texts(anchor_type, anchor)):
                    for pos, t in enumerate(texts):
                        t_type = anchor_type if pos % 2 == 0 else other_type(anchor_type)
                        key = None if t is None else (t_type, t)
                        if key is not None and key not in node_index:
                            node_index[key] = len(node_seqs)
                            node_seqs.append(self.sequence(*key))
                        pending[side].append((row, j, pos, key))

        U = len(node_seqs)
        width = max(cfg.l_q, cfg.l_i)
        node_ids = np.zeros((U, width), dtype=np.int64)
        node_len = np.zeros(U, dtype=np.int64)
        for u, seq in enumerate(node_seqs):
            node_ids[u, :seq.target_length] = seq.ids
            node_len[u] = seq.true_length
        for side in SIDES:
            for row, j, pos, key in pending[side]:
                slots[side][row, j, pos] = U if key is None else node_index[key]
        return PairBatch(q_ids, q_len, i_ids, i_len, node_ids, node_len, slots)


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------

class MulCounter:
    """Tally of scalar multiplications performed by instrumented code."""

    def __init__(self) -> None:
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)


def _matmul(a: np.ndarray, b: np.ndarray, counter: Optional[MulCounter]) -> np.ndarray:
    if counter is not None:
        counter.add(int(np.prod(a.shape[:-1])) * a.shape[-1] * b.shape[-1])
    return a @ b


def _scale(a: np.ndarray, s, counter: Optional[MulCounter]) -> np.ndarray:
    if counter is not None:
        counter.add(a.size)
    return a * s


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    z = np.exp(x[~pos])
    out[~pos] = z / (1.0 + z)
    return out


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0, x, slope * x)


def softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _inv_len(lengths: np.ndarray, dtype) -> np.ndarray:
    return (1.0 / np.maximum(lengths, 1)).astype(dtype)


def macro_embedding(E: np.ndarray, true_length, counter: Optional[MulCounter] = None) -> np.ndarray:
    """Mean of the first ``true_length`` rows of ``E`` (``..., l, d``).

    Zero when ``true_length`` is 0.
    """
    E = np.asarray(E)
    true_length = np.asarray(true_length)
    mask = (np.arange(E.shape[-2]) < true_length[..., None]).astype(E.dtype)
    total = (E * mask[..., None]).sum(axis=-2)
    return _scale(total, _inv_len(true_length, E.dtype)[..., None], counter)


def micro_embedding(E_q: np.ndarray, E_i: np.ndarray, counter: Optional[MulCounter] = None) -> np.ndarray:
    """Row-major ``vec`` of the ``l_q x l_i`` dot-product matrix.

    Entry ``r * l_i + c`` is ``<E_q[r], E_i[c]>``.
    """
    M = _matmul(E_q, np.swapaxes(E_i, -1, -2), counter)
    return M.reshape(M.shape[:-2] + (-1,))


def instance_embedding(node_macros: np.ndarray, present: np.ndarray,
                       slot_weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Node-level mean over all ``k + 1`` positions (null positions are zero).

    ``node_macros`` is ``(..., k+1, d)``; ``present`` masks real nodes.
    """
    node_macros = np.asarray(node_macros)
    if slot_weights is None:
        slot_weights = np.full(node_macros.shape[-2], 1.0 / node_macros.shape[-2])
    masked = node_macros * np.asarray(present, dtype=node_macros.dtype)[..., None]
    return np.einsum("...sd,s->...d", masked, slot_weights.astype(node_macros.dtype))


def positional_encoding(length: int, d: int, dtype=np.float64) -> np.ndarray:
    pos = np.arange(length)[:, None]
    freq = 1.0 / 10000.0 ** (2 * (np.arange(d) // 2) / d)
    angle = pos * freq[None, :]
    pe = np.where(np.arange(d) % 2 == 0, np.sin(angle), np.cos(angle))
    return pe.astype(dtype)


@dataclass
class MetapathTrace:
    instances: np.ndarray
    concat: np.ndarray
    logits: np.ndarray
    attention: np.ndarray
    aggregate: np.ndarray
    output: np.ndarray


def metapath_embedding(macro_q: np.ndarray, macro_i: np.ndarray, instances: np.ndarray,
                       W_att: np.ndarray, b_att: np.ndarray, slope: float,
                       counter: Optional[MulCounter] = None) -> MetapathTrace:
    """Attention-weighted instance aggregation.

    ``instances`` is ``(B, n, d)``. Attention is the softmax of
    ``[macro_q | macro_i | inst_1 | ... | inst_n] @ W_att + b_att`` over all
    ``n`` slots; the output is ``LeakyReLU(sum_j att_j * inst_j)``.
    """
    B, n, d = instances.shape
    concat = np.concatenate([macro_q, macro_i, instances.reshape(B, n * d)], axis=1)
    logits = _matmul(concat, W_att, counter) + b_att
    att = softmax(logits)
    if counter is not None:
        counter.add(B * n * d)
    aggregate = np.einsum("bn,bnd->bd", att, instances)
    output = leaky_relu(aggregate, slope)
    if counter is not None:
        counter.add(aggregate.size)
    return MetapathTrace(instances, concat, logits, att, aggregate, output)


def fuse_and_score(E_all: np.ndarray, weights: dict[str, np.ndarray],
                   counter: Optional[MulCounter] = None) -> tuple[np.ndarray, list[np.ndarray], np.ndarray]:
    """Three ReLU layers then a sigmoid unit.

    Returns ``(y_hat, [E_1, E_2, E_3], logit)`` with ``y_hat`` of shape ``(B,)``.
    """
    layers = []
    h = E_all
    for j in range(3):
        h = np.maximum(_matmul(h, weights[f"W{j}"], counter) + weights[f"b{j}"], 0.0)
        layers.append(h)
    z = (_matmul(h, weights["W3"], counter) + weights["b3"])[:, 0]
    return sigmoid(z), layers, z


# ---------------------------------------------------------------------------
# Full forward pass
# ---------------------------------------------------------------------------

@dataclass
class ForwardTrace:
    batch: PairBatch
    E_q: np.ndarray
    E_i: np.ndarray
    seq_q: np.ndarray
    seq_i: np.ndarray
    M_int: np.ndarray
    E_int: np.ndarray
    node_macros: Optional[np.ndarray]
    metapaths: dict[str, MetapathTrace]
    E_all: np.ndarray
    layers: list[np.ndarray]
    logit: np.ndarray
    y_hat: np.ndarray
    pe_q: Optional[np.ndarray] = None
    pe_i: Optional[np.ndarray] = None

    def attention(self, side: str) -> np.ndarray:
        return self.metapaths[side].attention


def _positional_terms(batch: PairBatch, config: ModelConfig, dtype):
    if not config.positional:
        return None, None
    pe_q = positional_encoding(config.l_q, config.d, dtype)
    pe_i = positional_encoding(config.l_i, config.d, dtype)
    mq = (np.arange(config.l_q) < batch.q_len[:, None]).astype(dtype)
    mi = (np.arange(config.l_i) < batch.i_len[:, None]).astype(dtype)
    return pe_q[None] * mq[..., None], pe_i[None] * mi[..., None]


def forward_batch(batch: PairBatch, params: BermParameters,
                  counter: Optional[MulCounter] = None) -> ForwardTrace:
    cfg = params.config
    W = params.weights
    table = params.embedding.matrix
    dtype = table.dtype
    v = cfg.variant
    B = batch.size

    E_q = table[batch.q_ids]
    E_i = table[batch.i_ids]
    seq_q = _scale(E_q.sum(axis=1), _inv_len(batch.q_len, dtype)[:, None], counter)
    seq_i = _scale(E_i.sum(axis=1), _inv_len(batch.i_len, dtype)[:, None], counter)

    pe_q, pe_i = _positional_terms(batch, cfg, dtype)
    P_q = E_q if pe_q is None else E_q + pe_q
    P_i = E_i if pe_i is None else E_i + pe_i
    if v.use_micro:
        M_int = _matmul(P_q, np.swapaxes(P_i, 1, 2), counter)
        E_int = M_int.reshape(B, -1)
    else:
        M_int = np.zeros((B, cfg.l_q, cfg.l_i), dtype=dtype)
        E_int = M_int.reshape(B, -1)

    node_macros = None
    metapaths: dict[str, MetapathTrace] = {}
    if v.use_metapath:
        U = batch.null_slot
        sums = table[batch.node_ids].sum(axis=1)
        node_macros = np.zeros((U + 1, cfg.d), dtype=dtype)
        node_macros[:U] = _scale(sums, _inv_len(batch.node_len, dtype)[:, None], counter)
        slot_w = cfg.slot_weights().astype(dtype)
        for side in SIDES:
            gathered = node_macros[batch.slots[side]]          # B, n, k+1, d
            inst = _scale(gathered, slot_w[None, None, :, None], counter).sum(axis=2)
            metapaths[side] = metapath_embedding(seq_q, seq_i, inst, W[f"W_att_{side}"],
                                                 W[f"b_att_{side}"], cfg.slope, counter)

    parts = []
    if v.use_macro:
        parts += [seq_q, seq_i]
    if v.use_micro:
        parts.append(E_int)
    if v.use_metapath:
        parts += [metapaths["qiq"].output, metapaths["iqi"].output]
    E_all = np.concatenate(parts, axis=1)
    if E_all.shape[1] != W["W0"].shape[0]:
        raise ValueError(f"fusion input width {E_all.shape[1]} != W0 rows {W['W0'].shape[0]}")
    y_hat, layers, logit = fuse_and_score(E_all, W, counter)
    return ForwardTrace(batch, E_q, E_i, seq_q, seq_i, M_int, E_int, node_macros, metapaths,
                        E_all, layers, logit, y_hat, pe_q, pe_i)


def forward(query: str, item: str, encoder: ContextEncoder, params: BermParameters,
            counter: Optional[MulCounter] = None) -> ForwardTrace:
    """Single-pair forward pass (a batch of one)."""
    if encoder.config != params.config:
        raise ValueError("encoder and parameters disagree on the model configuration")
    return forward_batch(encoder.encode_pairs([(query, item)]), params, counter)


SCORE_BATCH = 512


def score_pairs(pairs: Sequence[tuple[str, str]], encoder: ContextEncoder,
                params: BermParameters, batch_size: int = SCORE_BATCH) -> np.ndarray:
    """Scores in input order, computed in fixed-size chunks."""
    out = np.empty(len(pairs), dtype=np.float64)
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start:start + batch_size]
        out[start:start + len(chunk)] = forward_batch(encoder.encode_pairs(chunk), params).y_hat
    return out


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_HEADER_KEYS = ("d", "l_q", "l_i", "k", "b", "slope", "positional",
                "use_macro", "use_micro", "use_metapath", "use_intermediate_node")


def _fmt(dtype) -> str:
    return "%.9g" if np.dtype(dtype) == np.float32 else "%.17g"


def write_matrices(fh, tensors: dict[str, np.ndarray]) -> None:
    for name, arr in tensors.items():
        arr2 = arr.reshape(arr.shape[0], -1)
        fh.write(f"[{name}] {arr2.shape[0]} {arr2.shape[1]}\n")
        np.savetxt(fh, arr2, fmt=_fmt(arr.dtype), delimiter=" ")


def read_checkpoint(path: str | Path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    header: dict[str, str] = {}
    tensors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    pos = 0
    while pos < len(lines) and not lines[pos].startswith("["):
        line = lines[pos].strip()
        pos += 1
        if line and not line.startswith("#"):
            key, _, value = line.partition("=")
            header[key.strip()] = value.strip()
    dtype = np.dtype(header.get("dtype", "float32"))
    while pos < len(lines):
        line = lines[pos]
        pos += 1
        if not line:
            continue
        name, rows, cols = line.split()
        rows, cols = int(rows), int(cols)
        block = lines[pos:pos + rows]
        pos += rows
        if len(block) != rows:
            raise ValueError(f"{path}: tensor {name} truncated")
        arr = np.array([r.split() for r in block], dtype=np.float64).reshape(rows, cols) \
            if rows else np.zeros((0, cols))
        tensors[name.strip("[]")] = arr.astype(dtype)
    return header, tensors


def _bool(s: str) -> bool:
    return s in ("1", "true", "True")


def save_checkpoint(params: BermParameters, path: str | Path) -> None:
    cfg = params.config
    values = {"d": cfg.d, "l_q": cfg.l_q, "l_i": cfg.l_i, "k": cfg.k, "b": cfg.b,
              "slope": repr(cfg.slope), "positional": int(cfg.positional),
              "use_macro": int(cfg.variant.use_macro), "use_micro": int(cfg.variant.use_micro),
              "use_metapath": int(cfg.variant.use_metapath),
              "use_intermediate_node": int(cfg.variant.use_intermediate_node)}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("kind = berm\n")
        fh.write(f"dtype = {np.dtype(params.dtype).name}\n")
        for key in _HEADER_KEYS:
            fh.write(f"{key} = {values[key]}\n")
        write_matrices(fh, params.tensors())


def config_from_header(header: dict[str, str]) -> ModelConfig:
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise ValueError(f"checkpoint header lacks {missing}")
    variant = AblationVariant(*(_bool(header[k]) for k in
                                ("use_macro", "use_micro", "use_metapath", "use_intermediate_node")))
    return ModelConfig(int(header["d"]), int(header["l_q"]), int(header["l_i"]), int(header["k"]),
                       int(header["b"]), variant, float(header["slope"]), _bool(header["positional"]))


def load_checkpoint(path: str | Path) -> BermParameters:
    header, tensors = read_checkpoint(path)
    if header.get("kind") != "berm":
        raise ValueError(f"{path}: not a BERM checkpoint (kind={header.get('kind')})")
    config = config_from_header(header)
    embedding = EmbeddingTable(tensors.pop("embedding"))
    return BermParameters(config, embedding, tensors)
