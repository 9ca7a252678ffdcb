import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_graph, refine_oracle, text_edges
from berm.graph import (CLICK, ITEM, PURCHASE, QUERY, BipartiteGraph, EdgeData, Origin,
                        build_graph, enumerate_metapath_instances, rank_neighbors, refine_graph)


class TestAddInteraction:
    def test_accumulates(self):
        g = BipartiteGraph()
        g.add_interaction("q", "i", CLICK, 3)
        e = g.add_interaction("q", "i", CLICK, 2)
        assert e.click_count == 5 and e.purchase_count == 0

    def test_purchase_on_new_pair(self):
        g = BipartiteGraph()
        e = g.add_interaction("q", "i", PURCHASE, 1)
        assert (e.click_count, e.purchase_count) == (0, 1)
        assert g.queries == ["q"] and g.items == ["i"]

    def test_rejects_bad_input(self):
        g = BipartiteGraph()
        with pytest.raises(ValueError):
            g.add_interaction("q", "i", CLICK, 0)
        with pytest.raises(ValueError):
            g.add_interaction("q", "i", "view", 1)

    def test_log_matches_recount_oracle(self):
        rng = np.random.default_rng(2)
        log = [(f"q{rng.integers(3)}", f"i{rng.integers(3)}", [CLICK, PURCHASE][rng.integers(2)],
                int(rng.integers(1, 5))) for _ in range(10)]
        oracle: dict = {}
        for q, i, b, c in log:
            cl, pu = oracle.get((q, i), (0, 0))
            oracle[(q, i)] = (cl + c, pu) if b == CLICK else (cl, pu + c)
        g = build_graph(log)
        assert {k: v[:2] for k, v in text_edges(g).items()} == oracle

    def test_bipartite_adjacency(self, fixture_graph):
        g = fixture_graph
        for (q, i) in g.edges:
            assert i in g.neighbors(QUERY, q) and q in g.neighbors(ITEM, i)


class TestRefine:
    def _one_edge(self, click=1, purchase=0):
        g = BipartiteGraph()
        if click:
            g.add_interaction("q", "i", CLICK, click)
        if purchase:
            g.add_interaction("q", "i", PURCHASE, purchase)
        return g

    def test_low_score_click_edge_removed(self):
        out = refine_graph(self._one_edge(), lambda q, i: 0.2, 0.3, 0.7, [("q", "i")])
        assert out.edges == {}

    def test_purchase_edge_kept(self):
        out = refine_graph(self._one_edge(purchase=1), lambda q, i: 0.01, 0.3, 0.7, [("q", "i")])
        assert out.edge_set() == {("q", "i")}

    def test_high_score_non_edge_added(self):
        g = self._one_edge()
        g.add_node(ITEM, "j")
        out = refine_graph(g, lambda q, i: 0.9, 0.3, 0.7, [("q", "j")])
        e = out.edge(0, 1)
        assert e == EdgeData(0, 0, Origin.ADDED)
        # the input graph is untouched
        assert g.edge(0, 1) is None

    def test_pairs_outside_candidates_untouched(self):
        g = self._one_edge()
        out = refine_graph(g, lambda q, i: 0.0, 0.3, 0.7, [])
        assert out.edge_set() == {("q", "i")}

    def test_new_nodes_created_for_added_edges(self):
        out = refine_graph(BipartiteGraph(), lambda q, i: 0.95, 0.3, 0.7, [("nq", "ni")])
        assert out.edge_set() == {("nq", "ni")}

    def test_alpha_above_beta_rejected(self):
        with pytest.raises(ValueError):
            refine_graph(BipartiteGraph(), lambda q, i: 0.5, 0.8, 0.7, [])

    def test_teacher_failure_aborts(self):
        g = self._one_edge()

        def teacher(q, i):
            raise KeyError((q, i))

        with pytest.raises(KeyError):
            refine_graph(g, teacher, 0.3, 0.7, [("q", "i")])
        assert g.edge_set() == {("q", "i")}

    def test_lambda_blend_keeps_behavior_edges(self):
        # 0.5 * 1 + 0.5 * 0.1 = 0.55 >= alpha
        out = refine_graph(self._one_edge(), lambda q, i: 0.1, 0.3, 0.7, [("q", "i")], lam=0.5)
        assert out.edge_set() == {("q", "i")}

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    def test_matches_brute_force_oracle(self, seed, a, b):
        alpha, beta = min(a, b), max(a, b)
        rng = np.random.default_rng(seed)
        n_q, n_i = int(rng.integers(1, 16)), int(rng.integers(1, 16))
        g = random_graph(rng, n_q, n_i)
        pairs = [(f"q{q}", f"i{i}") for q in range(n_q) for i in range(n_i)]
        scores = {p: float(rng.random()) for p in pairs}
        candidates = [p for p in pairs if rng.random() < 0.8]
        before = text_edges(g)
        out = refine_graph(g, lambda q, i: scores[(q, i)], alpha, beta, candidates)
        got = text_edges(out)
        assert got == refine_oracle(before, {p: scores[p] for p in candidates}, alpha, beta)
        assert all(p in got for p, e in before.items() if e[1] > 0)
        # idempotent under the same scores and candidates
        again = refine_graph(out, lambda q, i: scores[(q, i)], alpha, beta, candidates)
        assert text_edges(again) == got


class TestRankNeighbors:
    def test_purchase_beats_many_clicks(self):
        g = BipartiteGraph()
        g.add_interaction("q", "i1", PURCHASE, 1)
        g.add_interaction("q", "i2", CLICK, 100)
        assert rank_neighbors(g, QUERY, 0).neighbors == (0, 1)

    def test_behavioral_order(self):
        g = BipartiteGraph()
        g.add_interaction("q", "low", CLICK, 1)
        g.add_interaction("q", "high", CLICK, 9)
        g.add_interaction("q", "bought", PURCHASE, 1)
        g.add_interaction("q", "bought2", PURCHASE, 3)
        g.add_node(ITEM, "added")
        g.add_edge(0, 4, EdgeData(0, 0, Origin.ADDED))
        ranked = [g.items[i] for i in rank_neighbors(g, QUERY, 0).neighbors]
        assert ranked == ["bought2", "bought", "high", "low", "added"]

    def test_added_edges_ordered_by_teacher_score(self):
        g = BipartiteGraph()
        g.add_node(QUERY, "q")
        for name in ("a", "b", "c"):
            g.add_edge(0, g.add_node(ITEM, name), EdgeData(0, 0, Origin.ADDED))
        g.add_interaction("q", "d", CLICK, 1)
        scores = {("q", "a"): 0.8, ("q", "b"): 0.95, ("q", "c"): 0.75}
        # behavioral mode ignores scores for behavior edges but uses them among added edges
        from berm.graph import behavioral_neighbor_fn
        fn = behavioral_neighbor_fn(g)
        assert [g.items[i] for i in fn(QUERY, 0)][0] == "d"
        ranked = rank_neighbors(g, QUERY, 0, lam=0.0, teacher_scores=scores)
        assert [g.items[i] for i in ranked.neighbors] == ["b", "a", "c", "d"]

    def test_lambda_one_ties_by_clicks_then_id(self):
        g = BipartiteGraph()
        g.add_interaction("q", "i0", CLICK, 2)
        g.add_interaction("q", "i1", CLICK, 7)
        g.add_interaction("q", "i2", CLICK, 2)
        assert rank_neighbors(g, QUERY, 0, lam=1.0, teacher_scores={}).neighbors == (1, 0, 2)

    def test_score_new_blend(self):
        g = BipartiteGraph()
        g.add_node(QUERY, "q")
        g.add_edge(0, g.add_node(ITEM, "i1"), EdgeData(0, 0, Origin.ADDED))
        g.add_interaction("q", "i2", CLICK, 1)
        scores = {("q", "i1"): 0.9, ("q", "i2"): 0.2}
        # Score_new(i1) = 0.5 * 0 + 0.5 * 0.9 = 0.45; Score_new(i2) = 0.5 * 1 + 0.5 * 0.2 = 0.6
        ranked = rank_neighbors(g, QUERY, 0, lam=0.5, teacher_scores=scores)
        assert [g.items[i] for i in ranked.neighbors] == ["i2", "i1"]

    def test_top_b_and_empty(self):
        g = BipartiteGraph()
        for j in range(5):
            g.add_interaction("q", f"i{j}", CLICK, j + 1)
        g.add_node(QUERY, "lonely")
        assert rank_neighbors(g, QUERY, 0, b=2).neighbors == (4, 3)
        assert rank_neighbors(g, QUERY, 1, b=2).neighbors == ()

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.0, 1.0))
    def test_matches_sort_oracle(self, seed, lam):
        rng = np.random.default_rng(seed)
        g = random_graph(rng, 3, 8, p_edge=0.7)
        scores = {(q, i): float(rng.random()) for q in g.queries for i in g.items}
        for q in range(len(g.queries)):
            got = rank_neighbors(g, QUERY, q, lam=lam, teacher_scores=scores).neighbors
            entries = []
            for i in g.neighbors(QUERY, q):
                e = g.edge(q, i)
                user = 1.0 if e.click_count > 0 else 0.0
                s = lam * user + (1 - lam) * scores[(g.queries[q], g.items[i])]
                entries.append((-s, -e.click_count, i))
            assert got == tuple(i for *_, i in sorted(entries))
            assert rank_neighbors(g, QUERY, q, lam=lam, teacher_scores=scores).neighbors == got


class TestMetapathInstances:
    def _fixture(self):
        # Q -> {I1 (5 clicks), I2 (2 clicks)}; I1 -> {Qa (4), Qb (3)}; I2 -> {Qc}
        g = BipartiteGraph()
        g.add_interaction("Q", "I1", CLICK, 5)
        g.add_interaction("Q", "I2", CLICK, 2)
        g.add_interaction("Qa", "I1", CLICK, 4)
        g.add_interaction("Qb", "I1", CLICK, 3)
        g.add_interaction("Qc", "I2", CLICK, 1)
        return g

    def test_dfs_order_with_padding(self):
        g = self._fixture()
        inst = enumerate_metapath_instances(g, QUERY, 0, k=2, b=2)
        named = [tuple(None if n is None else (g.queries if p % 2 == 0 else g.items)[n]
                       for p, n in enumerate(x.nodes)) for x in inst]
        assert named == [("Q", "I1", "Qa"), ("Q", "I1", "Qb"), ("Q", "I2", "Qc"), ("Q", "I2", None)]

    def test_isolated_anchor_fully_padded(self):
        g = BipartiteGraph()
        g.add_node(QUERY, "alone")
        inst = enumerate_metapath_instances(g, QUERY, 0, k=2, b=2)
        assert len(inst) == 4
        assert all(x.nodes == (0, None, None) and x.present == (True, False, False) for x in inst)

    def test_example_path_q2_i3_q3(self):
        g = BipartiteGraph()
        g.add_interaction("q2", "i3", CLICK, 1)
        g.add_interaction("q3", "i3", CLICK, 1)
        inst = enumerate_metapath_instances(g, QUERY, g.node_id(QUERY, "q2"), k=2, b=2)
        first = inst[0].nodes
        assert (g.queries[first[0]], g.items[first[1]], g.queries[first[2]]) == ("q2", "i3", "q3")

    def test_item_anchor(self):
        g = self._fixture()
        inst = enumerate_metapath_instances(g, ITEM, g.node_id(ITEM, "I1"), k=2, b=2)
        assert [x.node_type(p) for p in range(3) for x in inst[:1]] == [ITEM, QUERY, ITEM]
        # I1 -> Q (5) -> I2 (I1 excluded), padding
        assert inst[0].nodes == (0, 0, 1) and inst[1].nodes == (0, 0, None)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 3), st.integers(1, 3))
    def test_count_alternation_and_no_backtrack(self, seed, k, b):
        rng = np.random.default_rng(seed)
        g = random_graph(rng, 6, 6, p_edge=0.35)
        for anchor_type in (QUERY, ITEM):
            for anchor in range(6):
                inst = enumerate_metapath_instances(g, anchor_type, anchor, k, b)
                assert len(inst) == b ** k
                for x in inst:
                    assert x.nodes[0] == anchor and len(x.nodes) == k + 1
                    present = x.present
                    # padding only truncates a suffix
                    assert list(present) == sorted(present, reverse=True)
                    for p in range(1, k + 1):
                        if x.nodes[p] is None:
                            continue
                        assert x.node_type(p) != x.node_type(p - 1)
                        prev_t = x.node_type(p - 1)
                        key = (x.nodes[p - 1], x.nodes[p]) if prev_t == QUERY else (x.nodes[p], x.nodes[p - 1])
                        assert key in g.edges
                        if p >= 2:
                            assert x.nodes[p] != x.nodes[p - 2]


class TestSnapshot:
    def test_roundtrip(self, tmp_path, fixture_graph):
        g = refine_graph(fixture_graph, lambda q, i: 0.99, 0.3, 0.7, [("blue shoe", "red leather boot")])
        g.save(tmp_path / "graph.txt")
        text = (tmp_path / "graph.txt").read_text()
        assert text.startswith("#NODES_Q\n0\tred shoe\n")
        assert "\tadded_by_refinement\n" in text
        back = BipartiteGraph.load(tmp_path / "graph.txt")
        assert back.queries == g.queries and back.items == g.items and back.edges == g.edges

    def test_malformed_line(self, tmp_path):
        (tmp_path / "g.txt").write_text("#NODES_Q\n0\tq\n#NODES_I\n0\ti\n#EDGES\n0\t0\t1\n")
        with pytest.raises(ValueError, match=":6:"):
            BipartiteGraph.load(tmp_path / "g.txt")
