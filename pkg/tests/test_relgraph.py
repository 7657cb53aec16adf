from __future__ import annotations

import json

import numpy as np
import pytest

from corefmap import numcore as nc
from corefmap.errors import ParseError, ShapeError, ValidationError
from corefmap.numcore import Tensor
from corefmap.relgraph import (
    BiaffineParams,
    RelationGraph,
    graph_mse,
    load_relation_graphs,
    relation_graph,
    relation_scores,
    save_relation_graphs,
)


def biaffine_oracle(R, p):
    d = {k: v.data for k, v in p.named().items()}
    n = len(R)
    G = np.zeros((n, n))
    for i in range(n):
        start = np.maximum(R[i] @ d["W_start"] + d["b_start"], 0)
        for j in range(n):
            end = np.maximum(R[j] @ d["W_end"] + d["b_end"], 0)
            G[i, j] = 1.0 / (1.0 + np.exp(-(start @ d["W4"] @ end + d["b4"][0])))
    return G


def random_params(rng, width=5, proj=4, scale=0.5):
    p = BiaffineParams.init(width, proj, rng)
    for t in p.named().values():
        t.data = rng.normal(0, scale, t.shape)
    return p


class TestRelationGraph:
    def test_zero_params_give_half(self, rng):
        G = relation_graph(Tensor(rng.normal(size=(4, 5))), BiaffineParams.zeros(5, 4))
        assert np.all(G.scores == 0.5)

    def test_single_sentence(self, rng):
        assert relation_graph(Tensor(rng.normal(size=(1, 5))), random_params(rng)).scores.shape == (1, 1)

    def test_asymmetric(self, rng):
        G = relation_graph(Tensor(rng.normal(size=(2, 5))), random_params(rng)).scores
        assert G[0, 1] != G[1, 0]

    def test_matches_pairwise_oracle(self, rng):
        p = random_params(rng)
        R = rng.normal(size=(5, 5))
        np.testing.assert_allclose(relation_graph(Tensor(R), p).scores, biaffine_oracle(R, p), atol=1e-14)

    def test_open_unit_interval_under_large_weights(self, rng):
        p = random_params(rng, scale=30.0)
        G = relation_graph(Tensor(rng.normal(size=(6, 5)) * 10), p)
        G.check_open_unit()

    def test_width_mismatch(self, rng):
        with pytest.raises(ShapeError):
            relation_graph(Tensor(np.ones((3, 4))), random_params(rng))

    def test_json_round_trip_is_exact(self, rng):
        G = relation_graph(Tensor(rng.normal(size=(3, 5))), random_params(rng), "d7")
        back = RelationGraph.from_json(json.loads(G.dumps()))
        assert back.id == "d7" and back.scores.tobytes() == G.scores.tobytes()

    def test_check_open_unit_rejects_boundary(self):
        with pytest.raises(ValidationError):
            RelationGraph(1, np.array([[1.0]])).check_open_unit()


class TestGraphMse:
    def test_identity(self, rng):
        Y = rng.uniform(size=(3, 3))
        assert graph_mse(Tensor(Y), Y).item() == 0.0

    def test_single_entry(self):
        assert graph_mse(Tensor([[0.5]]), np.array([[1.0]])).item() == 0.25

    def test_two_by_two(self):
        assert graph_mse(Tensor(np.full((2, 2), 0.5)), np.array([[0.0, 1.0], [1.0, 0.0]])).item() == 0.25

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            graph_mse(Tensor(np.zeros((2, 2))), np.zeros((3, 3)))

    def test_nonnegative_and_zero_only_at_equality(self, rng):
        for _ in range(20):
            G, Y = rng.uniform(size=(4, 4)), rng.uniform(size=(4, 4))
            assert graph_mse(Tensor(G), Y).item() > 0.0

    def test_gradient_through_head(self, rng):
        p = random_params(rng)
        R = nc.parameter(rng.normal(size=(4, 5)))
        Y = rng.uniform(size=(4, 4))
        err = nc.check_gradients(lambda: graph_mse(relation_scores(R, p), Y), [R] + list(p.named().values()))
        assert err < 1e-4


class TestRelationGraphFiles:
    def test_round_trip(self, tmp_path, rng):
        gs = [RelationGraph(2, rng.uniform(size=(2, 2)), "a"), RelationGraph(1, [[0.3]], "b")]
        p = tmp_path / "g.jsonl"
        save_relation_graphs(gs, p)
        back = load_relation_graphs(p)
        assert list(back) == ["a", "b"]
        assert back["a"].scores.tobytes() == gs[0].scores.tobytes()

    def test_duplicate_id(self, tmp_path):
        p = tmp_path / "g.jsonl"
        line = json.dumps({"id": "a", "n": 1, "scores": [0.5]})
        p.write_text(line + "\n" + line + "\n")
        with pytest.raises(ParseError) as info:
            load_relation_graphs(p)
        assert info.value.line == 2

    def test_wrong_score_count(self, tmp_path):
        p = tmp_path / "g.jsonl"
        p.write_text(json.dumps({"id": "a", "n": 2, "scores": [0.5]}) + "\n")
        with pytest.raises(ParseError):
            load_relation_graphs(p)
