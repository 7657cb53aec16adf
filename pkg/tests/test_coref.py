from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corefmap.coref import (
    CorefClusters,
    CorefGraph,
    MentionSpan,
    build_coref_graph,
    heuristic_clusters,
    load_cluster_file,
    load_clusters,
    load_graph_file,
    save_cluster_file,
    save_graph_file,
)
from corefmap.corpus import Document
from corefmap.errors import ParseError, ValidationError


def doc_of(n, length=4, doc_id="d"):
    return Document(doc_id, [[f"w{i}"] * length for i in range(n)])


def cluster(*sentences):
    return tuple(MentionSpan(s, k, k) for k, s in enumerate(sentences))


def oracle_edges(raw_clusters):
    """Pairwise first-to-rest edges written as plain loops over the raw mentions."""
    edges = set()
    for c in raw_clusters:
        ordered = sorted(c, key=lambda m: (m[0], m[1], m[2]))
        first = ordered[0][0]
        for m in ordered[1:]:
            if m[0] != first:
                edges.add((first, m[0]))
    return edges


class TestLoadClusters:
    def test_minimal(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("[[[0,0,0],[2,1,1]]]")
        cl = load_clusters(p, doc_of(3))
        assert len(cl) == 1 and len(cl.clusters[0]) == 2

    def test_sorted_on_load(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("[[[2,1,1],[0,3,3],[0,0,0]]]")
        cl = load_clusters(p, doc_of(3))
        assert [m.to_list() for m in cl.clusters[0]] == [[0, 0, 0], [0, 3, 3], [2, 1, 1]]

    def test_span_past_sentence_end(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("[[[0,0,0],[1,2,4]]]")
        with pytest.raises(ValidationError, match=r"cluster 0 mention 1"):
            load_clusters(p, doc_of(2))

    def test_singleton_cluster_rejected(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("[[[0,0,0]]]")
        with pytest.raises(ValidationError):
            load_clusters(p, doc_of(2))

    def test_cluster_file_round_trip(self, tmp_path):
        docs = [doc_of(3, doc_id="a"), doc_of(4, doc_id="b")]
        data = {"a": CorefClusters((cluster(0, 2),)), "b": CorefClusters((cluster(1, 3, 3),))}
        p = tmp_path / "c.jsonl"
        save_cluster_file(data, p)
        assert load_cluster_file(p, docs) == data

    def test_cluster_file_unknown_id(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text(json.dumps({"id": "zz", "clusters": []}) + "\n")
        with pytest.raises(ParseError):
            load_cluster_file(p, [doc_of(2)])


class TestBuildGraph:
    def test_first_to_rest(self):
        g = build_coref_graph(CorefClusters((cluster(0, 2, 4),)), 5)
        assert g.edges == {(0, 2), (0, 4)}

    def test_single_sentence_cluster(self):
        assert build_coref_graph(CorefClusters((cluster(3, 3),)), 5).edges == frozenset()

    def test_deduplication(self):
        g = build_coref_graph(CorefClusters((cluster(0, 2), cluster(0, 2))), 3)
        assert g.sorted_edges() == [(0, 2)]

    def test_not_transitive(self):
        # 2 and 4 share a cluster but neither is its first mention
        g = build_coref_graph(CorefClusters((cluster(1, 2, 4),)), 5)
        assert (2, 4) not in g.edges

    def test_out_of_range(self):
        with pytest.raises(ValidationError):
            build_coref_graph(CorefClusters((cluster(0, 5),)), 5)

    def test_invalid_edge_orientation(self):
        with pytest.raises(ValidationError):
            CorefGraph(3, frozenset({(2, 1)}))

    def test_matches_oracle_on_random_sets(self):
        rng = random.Random(11)
        for _ in range(300):
            n = rng.randint(1, 10)
            raw = [
                [(rng.randrange(n), rng.randrange(3), 0) for _ in range(rng.randint(2, 5))]
                for _ in range(rng.randint(0, 4))
            ]
            raw = [[(s, t, t) for s, t, _ in c] for c in raw]
            spans = CorefClusters(tuple(tuple(MentionSpan(*m) for m in c) for c in raw))
            g = build_coref_graph(spans, n)
            assert set(g.edges) == oracle_edges(raw)
            assert len(g.edges) <= sum(len({m[0] for m in c}) - 1 for c in raw)

    def test_graph_file_round_trip(self, tmp_path):
        docs = [doc_of(3, doc_id="a")]
        graphs = {"a": CorefGraph(3, frozenset({(0, 2)}))}
        p = tmp_path / "g.jsonl"
        save_graph_file(graphs, p)
        assert load_graph_file(p, docs) == graphs

    def test_graph_file_node_count_mismatch(self, tmp_path):
        p = tmp_path / "g.jsonl"
        p.write_text(json.dumps({"id": "a", "n": 5, "edges": []}) + "\n")
        with pytest.raises(ParseError, match="5 nodes"):
            load_graph_file(p, [doc_of(3, doc_id="a")])


class TestHeuristic:
    def test_repeated_name(self):
        doc = Document("h", [["Thalia", "ran"], ["it", "rained"], ["so", "what"], ["then", "Thalia", "slept"]])
        cl = heuristic_clusters(doc)
        assert len(cl) == 1
        assert [m.to_list() for m in cl.clusters[0]] == [[0, 0, 0], [3, 1, 1]]

    def test_no_repeats(self):
        doc = Document("h", [["Alpha", "x"], ["Beta", "y"]])
        assert len(heuristic_clusters(doc)) == 0

    def test_maximal_runs_not_double_counted(self):
        doc = Document(
            "h",
            [["in", "New", "York", "today"], ["New", "York", "again"], ["only", "York", "here"]],
        )
        cl = heuristic_clusters(doc)
        assert len(cl) == 1
        assert [m.to_list() for m in cl.clusters[0]] == [[0, 1, 2], [1, 0, 1]]


@settings(max_examples=100, deadline=None)
@given(
    st.integers(2, 10).flatmap(
        lambda n: st.tuples(
            st.just(n),
            st.lists(st.lists(st.integers(0, n - 1), min_size=2, max_size=5), max_size=4),
        )
    )
)
def test_edges_always_point_forward(args):
    n, sentence_lists = args
    clusters = CorefClusters(tuple(cluster(*s) for s in sentence_lists))
    g = build_coref_graph(clusters, n)
    assert all(s < d for s, d in g.edges)
