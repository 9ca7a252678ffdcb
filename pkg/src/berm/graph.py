"""Query-item behavior graph, teacher-guided refinement and metapath sampling."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

QUERY = "Q"
ITEM = "I"

CLICK = "click"
PURCHASE = "purchase"
BEHAVIORS = (CLICK, PURCHASE)


def other_type(node_type: str) -> str:
    if node_type == QUERY:
        return ITEM
    if node_type == ITEM:
        return QUERY
    raise ValueError(f"unknown node type {node_type!r}")


class Origin(str, enum.Enum):
    BEHAVIOR = "behavior"
    ADDED = "added_by_refinement"


@dataclass
class EdgeData:
    click_count: int = 0
    purchase_count: int = 0
    origin: Origin = Origin.BEHAVIOR

    def count(self, behavior: str) -> int:
        return self.click_count if behavior == CLICK else self.purchase_count


@dataclass(frozen=True)
class MetapathInstance:
    """Node ids along one instance, starting at the anchor.

    ``nodes[j]`` is ``None`` for null-padded positions; node types alternate
    starting from ``anchor_type``.
    """

    anchor_type: str
    nodes: tuple[Optional[int], ...]

    @property
    def present(self) -> tuple[bool, ...]:
        return tuple(n is not None for n in self.nodes)

    def node_type(self, position: int) -> str:
        return self.anchor_type if position % 2 == 0 else other_type(self.anchor_type)


@dataclass(frozen=True)
class NeighborList:
    anchor_type: str
    anchor: int
    neighbors: tuple[int, ...]


@dataclass
class BipartiteGraph:
    """Queries and items keyed by text, with integer ids per node type."""

    queries: list[str] = field(default_factory=list)
    items: list[str] = field(default_factory=list)
    edges: dict[tuple[int, int], EdgeData] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._index = {QUERY: {t: n for n, t in enumerate(self.queries)},
                       ITEM: {t: n for n, t in enumerate(self.items)}}
        self._adj: dict[str, dict[int, set[int]]] = {QUERY: {}, ITEM: {}}
        for q, i in self.edges:
            self._link(q, i)

    # -- nodes ------------------------------------------------------------
    def _texts(self, node_type: str) -> list[str]:
        return self.queries if node_type == QUERY else self.items

    def node_id(self, node_type: str, text: str) -> Optional[int]:
        return self._index[node_type].get(text)

    def node_text(self, node_type: str, node_id: int) -> str:
        return self._texts(node_type)[node_id]

    def add_node(self, node_type: str, text: str) -> int:
        idx = self._index[node_type].get(text)
        if idx is None:
            texts = self._texts(node_type)
            idx = len(texts)
            texts.append(text)
            self._index[node_type][text] = idx
        return idx

    def num_nodes(self, node_type: str) -> int:
        return len(self._texts(node_type))

    # -- edges ------------------------------------------------------------
    def _link(self, q: int, i: int) -> None:
        self._adj[QUERY].setdefault(q, set()).add(i)
        self._adj[ITEM].setdefault(i, set()).add(q)

    def _unlink(self, q: int, i: int) -> None:
        self._adj[QUERY][q].discard(i)
        self._adj[ITEM][i].discard(q)

    def add_interaction(self, query: str, item: str, behavior: str, count: int = 1) -> EdgeData:
        """Accumulate ``count`` behaviors on the (query, item) edge."""
        if behavior not in BEHAVIORS:
            raise ValueError(f"behavior must be one of {BEHAVIORS}, got {behavior!r}")
        if count < 1:
            raise ValueError("count must be >= 1")
        q = self.add_node(QUERY, query)
        i = self.add_node(ITEM, item)
        edge = self.edges.get((q, i))
        if edge is None:
            edge = self.edges[(q, i)] = EdgeData()
            self._link(q, i)
        if behavior == CLICK:
            edge.click_count += count
        else:
            edge.purchase_count += count
        return edge

    def add_edge(self, q: int, i: int, data: EdgeData) -> None:
        if (q, i) in self.edges:
            raise KeyError(f"edge {(q, i)} already present")
        self.edges[(q, i)] = data
        self._link(q, i)

    def remove_edge(self, q: int, i: int) -> None:
        del self.edges[(q, i)]
        self._unlink(q, i)

    def edge(self, q: int, i: int) -> Optional[EdgeData]:
        return self.edges.get((q, i))

    def edge_between(self, node_type: str, anchor: int, neighbor: int) -> EdgeData:
        key = (anchor, neighbor) if node_type == QUERY else (neighbor, anchor)
        return self.edges[key]

    def neighbors(self, node_type: str, node_id: int) -> list[int]:
        return sorted(self._adj[node_type].get(node_id, ()))

    def copy(self) -> "BipartiteGraph":
        return BipartiteGraph(
            list(self.queries), list(self.items),
            {k: EdgeData(e.click_count, e.purchase_count, e.origin) for k, e in self.edges.items()},
        )

    def edge_set(self) -> set[tuple[str, str]]:
        return {(self.queries[q], self.items[i]) for q, i in self.edges}

    # -- persistence ------------------------------------------------------
    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("#NODES_Q\n")
            for n, text in enumerate(self.queries):
                fh.write(f"{n}\t{text}\n")
            fh.write("#NODES_I\n")
            for n, text in enumerate(self.items):
                fh.write(f"{n}\t{text}\n")
            fh.write("#EDGES\n")
            for (q, i), e in sorted(self.edges.items()):
                fh.write(f"{q}\t{i}\t{e.click_count}\t{e.purchase_count}\t{e.origin.value}\n")

    @classmethod
    def load(cls, path: str | Path) -> "BipartiteGraph":
        section = None
        queries: dict[int, str] = {}
        items: dict[int, str] = {}
        edges: dict[tuple[int, int], EdgeData] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if line in ("#NODES_Q", "#NODES_I", "#EDGES"):
                    section = line
                    continue
                if not line:
                    continue
                parts = line.split("\t")
                try:
                    if section in ("#NODES_Q", "#NODES_I") and len(parts) == 2:
                        (queries if section == "#NODES_Q" else items)[int(parts[0])] = parts[1]
                    elif section == "#EDGES" and len(parts) == 5:
                        edges[(int(parts[0]), int(parts[1]))] = EdgeData(
                            int(parts[2]), int(parts[3]), Origin(parts[4]))
                    else:
                        raise ValueError("wrong column count or missing section header")
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from None
        for name, table in (("query", queries), ("item", items)):
            if sorted(table) != list(range(len(table))):
                raise ValueError(f"{path}: {name} ids are not contiguous from 0")
        g = cls([queries[n] for n in range(len(queries))], [items[n] for n in range(len(items))], edges)
        for q, i in edges:
            if q >= len(g.queries) or i >= len(g.items):
                raise ValueError(f"{path}: edge {(q, i)} references an unknown node")
        return g


def build_graph(records: Iterable[tuple[str, str, str, int]]) -> BipartiteGraph:
    """Graph from ``(query, item, behavior, count)`` log records."""
    g = BipartiteGraph()
    for query, item, behavior, count in records:
        g.add_interaction(query, item, behavior, count)
    return g


def refine_graph(
    g: BipartiteGraph,
    teacher: Callable[[str, str], float],
    alpha: float,
    beta: float,
    candidate_pairs: Iterable[tuple[str, str]],
    *,
    lam: float = 0.0,
    behavior_kind: str = CLICK,
) -> BipartiteGraph:
    """Teacher-guided edge refinement; returns a new graph.

    Purchase edges are always kept. A click-only edge whose score is below
    ``alpha`` is dropped; a missing edge whose score exceeds ``beta`` is
    added. With ``lam > 0`` the score used is
    ``lam * User(q, i) + (1 - lam) * teacher(q, i)`` where ``User`` flags the
    ``behavior_kind`` behavior on the pair. Pairs outside
    ``candidate_pairs`` are untouched. Any teacher exception propagates and
    leaves ``g`` unmodified.
    """
    if not (0.0 <= alpha <= beta <= 1.0):
        raise ValueError(f"need 0 <= alpha <= beta <= 1, got alpha={alpha}, beta={beta}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    out = g.copy()
    for query, item in candidate_pairs:
        y = float(teacher(query, item))
        q, i = g.node_id(QUERY, query), g.node_id(ITEM, item)
        edge = g.edge(q, i) if q is not None and i is not None else None
        if lam:
            user = 1.0 if edge is not None and edge.count(behavior_kind) > 0 else 0.0
            y = lam * user + (1.0 - lam) * y
        if edge is not None:
            if edge.purchase_count > 0:
                continue
            if y < alpha and out.edge(q, i) is not None:
                out.remove_edge(q, i)
        elif y > beta:
            qn, inn = out.add_node(QUERY, query), out.add_node(ITEM, item)
            if out.edge(qn, inn) is None:
                out.add_edge(qn, inn, EdgeData(0, 0, Origin.ADDED))
    return out


def rank_neighbors(
    g: BipartiteGraph,
    anchor_type: str,
    anchor: int,
    lam: float = 0.0,
    teacher_scores: Optional[Mapping[tuple[str, str], float]] = None,
    behavior_kind: str = CLICK,
    b: Optional[int] = None,
) -> NeighborList:
    """Order the anchor's neighbors and keep the top ``b`` (all if ``None``).

    Without teacher scores and with ``lam == 0`` the order is behavioral:
    purchase edges (purchase count desc), then click edges (click count
    desc), then refinement-added edges. Otherwise neighbors are sorted by
    ``lam * User + (1 - lam) * Score`` descending. Ties fall back to click
    count desc, then neighbor id asc.
    """
    if b is not None and b < 1:
        raise ValueError("b must be >= 1")
    if anchor >= g.num_nodes(anchor_type):
        raise KeyError(f"{anchor_type} node {anchor} not in graph")
    neighbors = g.neighbors(anchor_type, anchor)

    def score(n: int) -> float:
        if teacher_scores is None:
            return 0.0
        q, i = (anchor, n) if anchor_type == QUERY else (n, anchor)
        return float(teacher_scores.get((g.queries[q], g.items[i]), 0.0))

    if lam == 0.0 and teacher_scores is None:
        def key(n: int):
            e = g.edge_between(anchor_type, anchor, n)
            if e.purchase_count > 0:
                return (0, -e.purchase_count, -e.click_count, n)
            if e.click_count > 0:
                return (1, -e.click_count, 0, n)
            return (2, -score(n), 0, n)
    else:
        def key(n: int):
            e = g.edge_between(anchor_type, anchor, n)
            user = 1.0 if e.count(behavior_kind) > 0 else 0.0
            return (-(lam * user + (1.0 - lam) * score(n)), -e.click_count, n)

    ranked = sorted(neighbors, key=key)
    if b is not None:
        ranked = ranked[:b]
    return NeighborList(anchor_type, anchor, tuple(ranked))


NeighborFn = Callable[[str, int], Sequence[int]]


def behavioral_neighbor_fn(g: BipartiteGraph, **rank_kwargs) -> NeighborFn:
    """Memoized full ranking per node, suitable for a frozen graph."""
    cache: dict[tuple[str, int], tuple[int, ...]] = {}

    def fn(node_type: str, node_id: int) -> Sequence[int]:
        key = (node_type, node_id)
        if key not in cache:
            cache[key] = rank_neighbors(g, node_type, node_id, **rank_kwargs).neighbors
        return cache[key]

    return fn


def padded_instances(anchor_type: str, anchor: Optional[int], k: int, b: int) -> list[MetapathInstance]:
    """``b**k`` instances holding only the anchor."""
    return [MetapathInstance(anchor_type, (anchor,) + (None,) * k) for _ in range(b ** k)]


def enumerate_metapath_instances(
    g: BipartiteGraph,
    anchor_type: str,
    anchor: int,
    k: int,
    b: int,
    neighbor_fn: Optional[NeighborFn] = None,
) -> list[MetapathInstance]:
    """All ``b**k`` instances of the length-``k`` alternating metapath.

    Depth-first over ranked neighbors, first-ranked branch first. The node
    just came from is never revisited at the next hop. Missing branches
    become null-padded instances.
    """
    if k < 1 or b < 1:
        raise ValueError("k and b must be >= 1")
    if neighbor_fn is None:
        neighbor_fn = behavioral_neighbor_fn(g)
    out: list[MetapathInstance] = []

    def walk(path: list[Optional[int]], prev: Optional[int]) -> None:
        depth = len(path) - 1
        if depth == k:
            out.append(MetapathInstance(anchor_type, tuple(path)))
            return
        cur = path[-1]
        children: list[Optional[int]] = []
        if cur is not None:
            cur_type = anchor_type if depth % 2 == 0 else other_type(anchor_type)
            children = [n for n in neighbor_fn(cur_type, cur) if n != prev][:b]
        children += [None] * (b - len(children))
        for child in children:
            walk(path + [child], cur)

    walk([anchor], None)
    return out
