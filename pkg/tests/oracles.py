"""Straight-line reference implementations used as test oracles.

Everything here is written with explicit Python loops over scalars so it
shares no vectorized code path with the package.
"""

import math

from berm.graph import CLICK, ITEM, PURCHASE, QUERY, BipartiteGraph


def macro(rows, true_length):
    d = len(rows[0])
    if true_length == 0:
        return [0.0] * d
    return [sum(rows[r][c] for r in range(true_length)) / true_length for c in range(d)]


def micro(E_q, E_i):
    out = []
    for r in range(len(E_q)):
        for c in range(len(E_i)):
            out.append(sum(a * b for a, b in zip(E_q[r], E_i[c])))
    return out


def instance(slot_vectors, present, weights=None):
    """Mean over slots; null slots contribute zero but still count."""
    n = len(slot_vectors)
    d = len(slot_vectors[0])
    if weights is None:
        weights = [1.0 / n] * n
    out = [0.0] * d
    for s in range(n):
        if present[s]:
            for c in range(d):
                out[c] += weights[s] * slot_vectors[s][c]
    return out


def vec_matmul(x, W):
    return [sum(x[r] * W[r][c] for r in range(len(x))) for c in range(len(W[0]))]


def softmax(z):
    m = max(z)
    e = [math.exp(v - m) for v in z]
    total = sum(e)
    return [v / total for v in e]


def metapath(macro_q, macro_i, instances, W_att, b_att, slope):
    concat = list(macro_q) + list(macro_i)
    for inst in instances:
        concat += list(inst)
    logits = [v + b for v, b in zip(vec_matmul(concat, W_att), b_att)]
    att = softmax(logits)
    d = len(instances[0])
    agg = [sum(att[j] * instances[j][c] for j in range(len(instances))) for c in range(d)]
    return [v if v >= 0 else slope * v for v in agg], att


def fuse(E_all, Ws, bs):
    h = list(E_all)
    for j in range(3):
        h = [max(0.0, v + b) for v, b in zip(vec_matmul(h, Ws[j]), bs[j])]
    z = vec_matmul(h, Ws[3])[0] + bs[3][0]
    return 1.0 / (1.0 + math.exp(-z))


def to_lists(a):
    return a.tolist()


def close(a, b, rel=1e-6, floor=1e-9):
    """Relative closeness for scalars or flat sequences."""
    if isinstance(a, (int, float)):
        a, b = [a], [b]
    return all(abs(x - y) <= rel * max(abs(x), abs(y), floor) for x, y in zip(a, b)) and len(a) == len(b)


def random_graph(rng, n_q, n_i, p_edge=0.4):
    g = BipartiteGraph()
    for q in range(n_q):
        g.add_node(QUERY, f"q{q}")
    for i in range(n_i):
        g.add_node(ITEM, f"i{i}")
    for q in range(n_q):
        for i in range(n_i):
            if rng.random() < p_edge:
                kind = rng.integers(3)
                if kind in (0, 2):
                    g.add_interaction(f"q{q}", f"i{i}", CLICK, int(rng.integers(1, 9)))
                if kind in (1, 2):
                    g.add_interaction(f"q{q}", f"i{i}", PURCHASE, int(rng.integers(1, 4)))
    return g


def refine_oracle(edges: dict, scores: dict, alpha: float, beta: float) -> dict:
    """Literal per-pair reading of the refinement loop over text-keyed edges."""
    out = dict(edges)
    for pair, y in scores.items():
        if pair in edges:
            click, purchase, _ = edges[pair]
            if purchase > 0:
                continue
            if y < alpha:
                del out[pair]
        elif y > beta:
            out[pair] = (0, 0, "added_by_refinement")
    return out


def text_edges(g: BipartiteGraph) -> dict:
    return {(g.queries[q], g.items[i]): (e.click_count, e.purchase_count, e.origin.value)
            for (q, i), e in g.edges.items()}
