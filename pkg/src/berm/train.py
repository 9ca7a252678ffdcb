"""Distillation loss, hand-derived gradients, Lazy-Adam and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, MutableMapping, Optional, Sequence

import numpy as np

from .model import (SIDES, AblationVariant, BermParameters, ContextEncoder, ForwardTrace,
                    ModelConfig, PairBatch, forward_batch, is_weight, score_pairs)

log = logging.getLogger(__name__)

CLAMP = 1e-7


def loss(y_hat, y, eps: float = CLAMP) -> float:
    """Summed binary cross-entropy against soft teacher labels."""
    y_hat = np.clip(np.asarray(y_hat, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise ValueError("prediction and label batches differ in length")
    return float(-np.sum(y * np.log(y_hat) + (1.0 - y) * np.log1p(-y_hat)))


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------

@dataclass
class GradientSet:
    """Dense gradients per weight plus sparse rows for the embedding table."""

    dense: dict[str, np.ndarray]
    rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    row_grads: Optional[np.ndarray] = None

    def embedding_map(self) -> dict[int, np.ndarray]:
        if self.row_grads is None:
            return {}
        return {int(r): g for r, g in zip(self.rows, self.row_grads)}

    def embedding_dense(self, n_rows: int, d: int) -> np.ndarray:
        out = np.zeros((n_rows, d))
        if self.row_grads is not None:
            out[self.rows] = self.row_grads
        return out


def _sparse_rows(ids: list[np.ndarray], grads: list[np.ndarray], d: int, dtype):
    ids_all = np.concatenate(ids) if ids else np.zeros(0, dtype=np.int64)
    g_all = np.concatenate(grads) if grads else np.zeros((0, d), dtype=dtype)
    keep = ids_all != 0
    ids_all, g_all = ids_all[keep], g_all[keep]
    rows, inverse = np.unique(ids_all, return_inverse=True)
    acc = np.zeros((rows.size, d), dtype=dtype)
    np.add.at(acc, inverse, g_all)
    return rows, acc


def backward(trace: ForwardTrace, y, params: BermParameters, *, wrt: str = "loss") -> GradientSet:
    """Exact gradients of the summed per-example loss (or of the summed logit).

    ``wrt="logit"`` differentiates the pre-sigmoid score instead of the loss,
    which is handy for gradient checks on piecewise-linear fixtures.
    """
    cfg = params.config
    W = params.weights
    table = params.embedding.matrix
    dtype = table.dtype
    d, n = cfg.d, cfg.n_instances
    batch = trace.batch
    B = batch.size
    v = cfg.variant

    if wrt == "loss":
        dz = (trace.y_hat - np.asarray(y, dtype=np.float64)).astype(dtype)
    elif wrt == "logit":
        dz = np.ones(B, dtype=dtype)
    else:
        raise ValueError("wrt must be 'loss' or 'logit'")

    grads: dict[str, np.ndarray] = {}
    h = trace.layers[2]
    grads["W3"] = h.T @ dz[:, None]
    grads["b3"] = dz.sum().reshape(1, 1).astype(dtype)
    dh = dz[:, None] @ W["W3"].T
    for j in (2, 1, 0):
        dpre = dh * (trace.layers[j] > 0)
        h_in = trace.layers[j - 1] if j > 0 else trace.E_all
        grads[f"W{j}"] = h_in.T @ dpre
        grads[f"b{j}"] = dpre.sum(axis=0, keepdims=True)
        dh = dpre @ W[f"W{j}"].T
    dE_all = dh

    d_seq_q = np.zeros((B, d), dtype=dtype)
    d_seq_i = np.zeros((B, d), dtype=dtype)
    off = 0
    if v.use_macro:
        d_seq_q += dE_all[:, off:off + d]
        d_seq_i += dE_all[:, off + d:off + 2 * d]
        off += 2 * d
    d_int = None
    if v.use_micro:
        d_int = dE_all[:, off:off + cfg.l_q * cfg.l_i]
        off += cfg.l_q * cfg.l_i
    d_out = {}
    if v.use_metapath:
        d_out["qiq"] = dE_all[:, off:off + d]
        d_out["iqi"] = dE_all[:, off + d:off + 2 * d]

    ids: list[np.ndarray] = []
    rows: list[np.ndarray] = []

    if v.use_metapath:
        U = batch.null_slot
        d_nodes = np.zeros((U + 1, d), dtype=dtype)
        slot_w = cfg.slot_weights().astype(dtype)
        for side in SIDES:
            mt = trace.metapaths[side]
            d_agg = d_out[side] * np.where(mt.aggregate >= 0, 1.0, cfg.slope).astype(dtype)
            d_att = np.einsum("bd,bnd->bn", d_agg, mt.instances)
            d_inst = mt.attention[:, :, None] * d_agg[:, None, :]
            d_logits = mt.attention * (d_att - (mt.attention * d_att).sum(axis=1, keepdims=True))
            grads[f"W_att_{side}"] = mt.concat.T @ d_logits
            grads[f"b_att_{side}"] = d_logits.sum(axis=0, keepdims=True)
            d_concat = d_logits @ W[f"W_att_{side}"].T
            d_seq_q += d_concat[:, :d]
            d_seq_i += d_concat[:, d:2 * d]
            d_inst = d_inst + d_concat[:, 2 * d:].reshape(B, n, d)
            d_gathered = d_inst[:, :, None, :] * slot_w[None, None, :, None]
            np.add.at(d_nodes, batch.slots[side].ravel(), d_gathered.reshape(-1, d))
        inv = (1.0 / np.maximum(batch.node_len, 1)).astype(dtype)
        per_word = (d_nodes[:U] * inv[:, None])[:, None, :]
        width = batch.node_ids.shape[1]
        ids.append(batch.node_ids.ravel())
        rows.append(np.broadcast_to(per_word, (U, width, d)).reshape(-1, d))

    dE_q = np.broadcast_to((d_seq_q * (1.0 / np.maximum(batch.q_len, 1)).astype(dtype)[:, None])[:, None, :],
                           (B, cfg.l_q, d)).copy()
    dE_i = np.broadcast_to((d_seq_i * (1.0 / np.maximum(batch.i_len, 1)).astype(dtype)[:, None])[:, None, :],
                           (B, cfg.l_i, d)).copy()
    if d_int is not None:
        dM = d_int.reshape(B, cfg.l_q, cfg.l_i)
        P_q = trace.E_q if trace.pe_q is None else trace.E_q + trace.pe_q
        P_i = trace.E_i if trace.pe_i is None else trace.E_i + trace.pe_i
        dE_q += dM @ P_i
        dE_i += np.swapaxes(dM, 1, 2) @ P_q
    ids += [batch.q_ids.ravel(), batch.i_ids.ravel()]
    rows += [dE_q.reshape(-1, d), dE_i.reshape(-1, d)]

    row_ids, row_grads = _sparse_rows(ids, rows, d, dtype)
    # every word the forward pass read counts as touched, even with a zero gradient
    touched = batch.word_ids()
    if not np.array_equal(touched, row_ids):
        full = np.zeros((touched.size, d), dtype=dtype)
        full[np.searchsorted(touched, row_ids)] = row_grads
        row_ids, row_grads = touched, full
    return GradientSet({k: grads[k].astype(dtype, copy=False) for k in W}, row_ids, row_grads)


# ---------------------------------------------------------------------------
# Lazy Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 1e-4
    l2_biases: bool = False
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def _moments(self, name: str, like: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if name not in self.m:
            self.m[name] = np.zeros_like(like)
            self.v[name] = np.zeros_like(like)
        return self.m[name], self.v[name]


def _regularized(name: str, state: AdamState) -> bool:
    if name == "embedding":
        return False
    return is_weight(name) or state.l2_biases


def lazy_adam_step(state: AdamState, grads: GradientSet,
                   params: BermParameters | MutableMapping[str, np.ndarray],
                   scale: float = 1.0, sparse_name: str = "embedding") -> None:
    """One in-place Adam update; embedding rows outside ``grads.rows`` are untouched.

    ``scale`` multiplies raw gradients (``1/batch`` turns summed loss into a
    mean). L2 (``state.l2 * w``) is added to weight-matrix gradients only,
    unless ``state.l2_biases`` is set. Row 0 of the embedding stays zero.
    """
    tensors = params.tensors() if isinstance(params, BermParameters) else params
    bad = [n for n, g in grads.dense.items() if not np.all(np.isfinite(g))]
    if grads.row_grads is not None and not np.all(np.isfinite(grads.row_grads)):
        bad.append(sparse_name)
    if bad:
        raise FloatingPointError(f"non-finite gradient in {bad}; step {state.t + 1} aborted")

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    b1, b2, lr, eps = state.beta1, state.beta2, state.lr, state.eps

    for name, g in grads.dense.items():
        p = tensors[name]
        g = g * scale
        if state.l2 and _regularized(name, state):
            g = g + state.l2 * p
        m, v = state._moments(name, p)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)

    if grads.row_grads is not None and grads.rows.size:
        table = tensors[sparse_name]
        m_all, v_all = state._moments(sparse_name, table)
        r = grads.rows
        g = grads.row_grads * scale
        m = b1 * m_all[r] + (1.0 - b1) * g
        v = b2 * v_all[r] + (1.0 - b2) * g * g
        m_all[r] = m
        v_all[r] = v
        table[r] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    if sparse_name in tensors:
        tensors[sparse_name][0] = 0.0


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 256
    seed: int = 0
    variant: str = "full"
    k: int = 2
    b: int = 2
    alpha: float = 0.3
    beta: float = 0.7
    lam: float = 0.0
    behavior_kind: str = "click"
    neighbor_rank: str = "behavior"
    d: int = 128
    l_q: int = 10
    l_i: int = 65
    min_count: int = 50
    l2: float = 1e-4
    l2_biases: bool = False
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    slope: float = 0.2
    positional: bool = False
    h3: int = 64
    distill_epochs: int = 60
    threshold: float = 0.5

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.epochs < 1 or self.distill_epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.alpha <= self.beta <= 1.0:
            raise ValueError(f"need 0 <= alpha <= beta <= 1 (alpha={self.alpha}, beta={self.beta})")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.behavior_kind not in ("click", "purchase"):
            raise ValueError("behavior_kind must be click or purchase")
        if self.neighbor_rank not in ("behavior", "score"):
            raise ValueError("neighbor_rank must be behavior or score")
        if self.min_count < 1 or self.h3 < 1:
            raise ValueError("min_count and h3 must be >= 1")
        AblationVariant.from_name(self.variant)

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.d, self.l_q, self.l_i, self.k, self.b,
                           AblationVariant.from_name(self.variant), self.slope, self.positional)

    def adam(self) -> AdamState:
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.l2, self.l2_biases)

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "default": {},
    "desk": {"d": 32, "l_i": 16, "epochs": 10, "batch_size": 32, "min_count": 2},
}


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    auc: float = math.nan
    f1: float = math.nan
    fnr: float = math.nan


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, last_good: BermParameters, epoch: int) -> None:
        super().__init__(message)
        self.last_good = last_good
        self.epoch = epoch


def _take(batch: PairBatch, idx: np.ndarray) -> PairBatch:
    """Rows ``idx`` of ``batch`` with the node table compacted to what they use."""
    slots = {s: batch.slots[s][idx] for s in batch.slots}
    U = batch.null_slot
    used = np.unique(np.concatenate([s.ravel() for s in slots.values()])) if slots else np.zeros(0, int)
    used = used[used != U]
    remap = np.full(U + 1, used.size, dtype=np.int64)
    remap[used] = np.arange(used.size)
    return PairBatch(batch.q_ids[idx], batch.q_len[idx], batch.i_ids[idx], batch.i_len[idx],
                     batch.node_ids[used], batch.node_len[used],
                     {s: remap[a] for s, a in slots.items()})


@dataclass
class TrainResult:
    params: BermParameters
    history: list[EpochRecord]


def train(
    examples: Sequence,
    encoder: ContextEncoder,
    config: TrainConfig,
    *,
    eval_pairs: Optional[Sequence[tuple[str, str]]] = None,
    eval_labels: Optional[Sequence[int]] = None,
    params: Optional[BermParameters] = None,
    dtype=np.float32,
) -> TrainResult:
    """Fit the scorer to teacher labels.

    ``examples`` are objects with ``query``, ``item`` and ``label``
    attributes (e.g. ``TransferExample``). Minibatch gradients are summed
    per example and scaled by ``1/len(batch)``. The recorded epoch loss is
    the mean per-example loss over that epoch's updates.
    """
    from .evaluation import evaluate_scores

    if not examples:
        raise ValueError("empty transfer set")
    rng = np.random.default_rng(config.seed)
    mcfg = config.model_config()
    if encoder.config != mcfg:
        raise ValueError("encoder configuration does not match the training config")
    if params is None:
        params = BermParameters.init(mcfg, encoder.vocab.size, rng, dtype=dtype)
    elif params.config != mcfg:
        raise ValueError("initial parameters do not match the training config")

    pairs = [(ex.query, ex.item) for ex in examples]
    labels = np.asarray([ex.label for ex in examples], dtype=np.float64)
    full = encoder.encode_pairs(pairs)
    state = config.adam()
    history: list[EpochRecord] = []
    last_good = params.copy()

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(pairs))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            trace = forward_batch(_take(full, idx), params)
            batch_loss = loss(trace.y_hat, labels[idx])
            if not math.isfinite(batch_loss):
                raise TrainingDiverged(f"non-finite loss in epoch {epoch}", last_good, epoch)
            grads = backward(trace, labels[idx], params)
            try:
                lazy_adam_step(state, grads, params, scale=1.0 / len(idx))
            except FloatingPointError as exc:
                raise TrainingDiverged(str(exc), last_good, epoch) from exc
            total += batch_loss
        record = EpochRecord(epoch, total / len(pairs))
        if eval_pairs is not None and eval_labels is not None:
            report = evaluate_scores(score_pairs(eval_pairs, encoder, params), eval_labels,
                                     config.threshold)
            record.auc, record.f1, record.fnr = report.auc, report.f1, report.fnr
        history.append(record)
        last_good = params.copy()
        log.info("epoch %d loss %.5f auc %.4f", epoch, record.loss, record.auc)
    return TrainResult(params, history)


# ---------------------------------------------------------------------------
# Finite-difference check
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tolerance: float

    @property
    def flagged(self) -> list[str]:
        return [n for n, e in self.max_rel_error.items() if not e < self.tolerance]

    @property
    def ok(self) -> bool:
        return not self.flagged

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values())


def grad_check(
    params: BermParameters,
    batch: PairBatch,
    labels,
    h: float = 1e-4,
    tolerance: float = 1e-4,
    *,
    wrt: str = "loss",
    grads: Optional[GradientSet] = None,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients with central differences, coordinate by coordinate.

    The error of a coordinate is ``|analytic - numeric| / max(|analytic|,
    |numeric|, floor)``; the report keeps the maximum per tensor. Embedding
    coordinates are checked for the rows the batch reads.
    """
    if params.dtype != np.float64:
        raise TypeError("grad_check needs float64 parameters")
    labels = np.asarray(labels, dtype=np.float64)

    def objective() -> float:
        tr = forward_batch(batch, params)
        if wrt == "logit":
            return float(tr.logit.sum())
        return float(-np.sum(labels * np.log(tr.y_hat) + (1 - labels) * np.log1p(-tr.y_hat)))

    if grads is None:
        grads = backward(forward_batch(batch, params), labels, params, wrt=wrt)

    def check(arr: np.ndarray, analytic: np.ndarray, coords) -> float:
        worst = 0.0
        for c in coords:
            old = arr[c]
            arr[c] = old + h
            up = objective()
            arr[c] = old - h
            down = objective()
            arr[c] = old
            num = (up - down) / (2 * h)
            a = float(analytic[c])
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), floor))
        return worst

    errors: dict[str, float] = {}
    for name, arr in params.weights.items():
        errors[name] = check(arr, grads.dense[name], np.ndindex(arr.shape))
    table = params.embedding.matrix
    dense_rows = grads.embedding_dense(table.shape[0], table.shape[1])
    words = batch.word_ids()
    errors["embedding"] = check(table, dense_rows,
                                [(int(r), j) for r in words for j in range(table.shape[1])])
    return GradCheckReport(errors, tolerance)
