from __future__ import annotations

import numpy as np
import pytest

from corefmap import numcore as nc
from corefmap.coref import CorefGraph
from corefmap.errors import ShapeError
from corefmap.graphenc import (
    GcnLayerParams,
    GinParams,
    gcn_encode,
    gcn_layer,
    gin_encode,
    gin_readout,
    gin_readouts,
)
from corefmap.numcore import DropoutStream, Tensor


def ln(x, g, b, eps=1e-5):
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def gcn_oracle(H, graph, p):
    """Node-by-node loop over the residual layer equations."""
    d = lambda t: t.data
    U = np.maximum(H @ d(p.W1) + d(p.b1), 0) @ d(p.W2) + d(p.b2)
    V = ln(H + U, d(p.ln1_gain), d(p.ln1_bias))
    nbrs = graph.neighbours()
    Wm = np.zeros_like(V)
    for i in range(graph.n):
        if nbrs[i]:
            agg = np.mean([V[j] @ d(p.W3) for j in nbrs[i]], axis=0)
            Wm[i] = np.maximum(agg + d(p.b3), 0)
    return ln(Wm + V, d(p.ln2_gain), d(p.ln2_bias))


def bn(x, g, b, eps=1e-5):
    mu = x.mean(axis=0)
    var = ((x - mu) ** 2).mean(axis=0)
    return (x - mu) / np.sqrt(var + eps) * g + b


def gin_oracle(Hs, graphs, params):
    sizes = [g.n for g in graphs]
    x = np.concatenate(Hs)
    A = np.zeros((sum(sizes), sum(sizes)))
    off = 0
    for g in graphs:
        A[off : off + g.n, off : off + g.n] = g.adjacency() + np.eye(g.n)
        off += g.n
    for layer in params.layers:
        d = {k: v.data for k, v in layer.named().items()}
        h = A @ x
        x = np.maximum(bn(h @ d["Wa"] + d["ba"], d["bn_gain"], d["bn_bias"]), 0) @ d["Wb"] + d["bb"]
    out, off = [], 0
    for n in sizes:
        out.append(x[off : off + n].mean(axis=0))
        off += n
    return np.stack(out)


def layer(rng, width=5, scale=0.4):
    p = GcnLayerParams.init(width, rng)
    for k, t in p.named().items():
        if not k.startswith("ln"):
            t.data = rng.normal(0, scale, t.shape)
    return p


def gin(rng, width=5, n_layers=3, scale=0.4):
    p = GinParams.init(width, n_layers, rng)
    for t in p.tensors():
        t.data = t.data + rng.normal(0, scale, t.shape)
    return p


class TestGcnLayer:
    def test_matches_loop_oracle(self, rng):
        p = layer(rng)
        H = rng.normal(size=(5, 5))
        g = CorefGraph(5, frozenset({(0, 1), (0, 3), (2, 4)}))
        np.testing.assert_allclose(gcn_layer(Tensor(H), g, p).data, gcn_oracle(H, g, p), atol=1e-12)

    def test_edgeless_reduces_to_layer_norm_of_v(self, rng):
        p = layer(rng)
        H = rng.normal(size=(3, 5))
        g = CorefGraph(3, frozenset())
        d = lambda t: t.data
        V = ln(H + np.maximum(H @ d(p.W1) + d(p.b1), 0) @ d(p.W2) + d(p.b2), 1.0, 0.0)
        np.testing.assert_allclose(gcn_layer(Tensor(H), g, p).data, ln(V, 1.0, 0.0), atol=1e-12)

    def test_single_edge_sees_exactly_the_other_node(self, rng):
        p = layer(rng)
        H = rng.normal(size=(2, 5))
        g = CorefGraph(2, frozenset({(0, 1)}))
        out = gcn_layer(Tensor(H), g, p).data
        np.testing.assert_allclose(out, gcn_oracle(H, g, p), atol=1e-12)
        swapped = gcn_layer(Tensor(H[::-1].copy()), g, p).data
        np.testing.assert_allclose(swapped, out[::-1], atol=1e-12)

    def test_row_count_mismatch(self, rng):
        with pytest.raises(ShapeError):
            gcn_layer(Tensor(np.ones((3, 5))), CorefGraph(4, frozenset()), layer(rng))

    def test_layer_norm_rows(self, rng):
        p = layer(rng)
        out = gcn_layer(Tensor(rng.normal(size=(6, 5))), CorefGraph(6, frozenset({(0, 5), (1, 2)})), p).data
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-9)
        np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-4)  # eps inside the root

    def test_strict_mode_uses_own_message(self, rng):
        p = layer(rng)
        H = rng.normal(size=(3, 5))
        g = CorefGraph(3, frozenset({(0, 1), (0, 2)}))
        strict = gcn_layer(Tensor(H), g, p, self_message=True).data
        # node 0 has two neighbours; the strict form only ever uses v_0
        H2 = H.copy()
        H2[1:] = rng.normal(size=(2, 5))
        np.testing.assert_allclose(gcn_layer(Tensor(H2), g, p, self_message=True).data[0], strict[0], atol=1e-12)

    def test_two_layer_gradient_on_path(self, rng):
        layers = [layer(rng, 4), layer(rng, 4)]
        g = CorefGraph(4, frozenset({(0, 1), (1, 2), (2, 3)}))
        H = nc.parameter(rng.normal(size=(4, 4)))
        w = rng.normal(size=(4, 4))
        leaves = [H] + [t for p in layers for t in p.named().values()]
        err = nc.check_gradients(lambda: nc.sum_(nc.mul(gcn_encode(H, g, layers), w)), leaves)
        assert err < 1e-4


class TestGcnEncode:
    def test_single_node(self, rng):
        layers = [layer(rng), layer(rng)]
        assert gcn_encode(Tensor(rng.normal(size=(1, 5))), CorefGraph(1, frozenset()), layers).shape == (1, 5)

    def test_eval_mode_deterministic(self, rng):
        layers = [layer(rng), layer(rng)]
        H = Tensor(rng.normal(size=(4, 5)))
        g = CorefGraph(4, frozenset({(0, 2)}))
        drop = DropoutStream(3, False)
        a = gcn_encode(H, g, layers, drop).data
        b = gcn_encode(H, g, layers, DropoutStream(4, False)).data
        assert a.tobytes() == b.tobytes()

    def test_permutation_equivariance(self, rng):
        layers = [layer(rng), layer(rng)]
        H = rng.normal(size=(5, 5))
        g = CorefGraph(5, frozenset({(0, 1), (1, 4), (2, 3)}))
        perm = [3, 0, 4, 1, 2]
        Hp = np.zeros_like(H)
        Hp[perm] = H
        out = gcn_encode(Tensor(H), g, layers).data
        outp = gcn_encode(Tensor(Hp), g.permuted(perm), layers).data
        np.testing.assert_allclose(outp[perm], out, atol=1e-12)

    def test_component_locality(self, rng):
        layers = [layer(rng), layer(rng)]
        H = rng.normal(size=(5, 5))
        # component A = {0, 1, 2}, component B = {3, 4}
        g = CorefGraph(5, frozenset({(0, 1), (1, 2), (3, 4)}))
        perm = [2, 0, 1, 3, 4]
        Hp = np.zeros_like(H)
        Hp[perm] = H
        a = gcn_encode(Tensor(H), g, layers).data
        b = gcn_encode(Tensor(Hp), g.permuted(perm), layers).data
        assert a[3:].tobytes() == b[3:].tobytes()

    def test_no_nan_on_edgeless(self, rng):
        layers = [layer(rng), layer(rng)]
        out = gcn_encode(Tensor(np.zeros((4, 5))), CorefGraph(4, frozenset()), layers).data
        assert np.all(np.isfinite(out))


class TestGin:
    def test_matches_oracle(self, rng):
        p = gin(rng)
        Hs = [rng.normal(size=(3, 5)), rng.normal(size=(4, 5))]
        gs = [CorefGraph(3, frozenset({(0, 2)})), CorefGraph(4, frozenset({(0, 1), (1, 3)}))]
        out = gin_readouts([Tensor(h) for h in Hs], gs, p).data
        np.testing.assert_allclose(out, gin_oracle(Hs, gs, p), atol=1e-12)

    def test_default_five_layers(self):
        assert len(GinParams.init().layers) == 5

    def test_single_node_graph(self, rng):
        p = gin(rng, n_layers=5)
        H = rng.normal(size=(1, 5))
        nodes = gin_encode(Tensor(H), CorefGraph(1, frozenset()), p).data
        np.testing.assert_allclose(gin_readout(Tensor(nodes)).data, nodes[0])
        np.testing.assert_allclose(nodes, gin_oracle([H], [CorefGraph(1, frozenset())], p), atol=1e-12)

    def test_readout_permutation_invariant(self, rng):
        p = gin(rng)
        H = rng.normal(size=(5, 5))
        g = CorefGraph(5, frozenset({(0, 1), (1, 4), (2, 3)}))
        perm = [4, 2, 0, 3, 1]
        Hp = np.zeros_like(H)
        Hp[perm] = H
        a = gin_readouts([Tensor(H)], [g], p).data
        b = gin_readouts([Tensor(Hp)], [g.permuted(perm)], p).data
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_edge_changes_readout(self, rng):
        p = gin(rng)
        H = Tensor(rng.normal(size=(4, 5)))
        a = gin_readouts([H], [CorefGraph(4, frozenset({(0, 1)}))], p).data
        b = gin_readouts([H], [CorefGraph(4, frozenset({(0, 1), (2, 3)}))], p).data
        assert np.abs(a - b).max() > 1e-6

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            gin_readouts([Tensor(np.ones((2, 5)))], [CorefGraph(3, frozenset())], gin(rng))
