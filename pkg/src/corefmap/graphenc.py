"""Graph encoders over the coreference graph: a residual GCN and a GIN."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import numcore as nc
from .coref import CorefGraph
from .errors import ShapeError
from .numcore import Tensor

WIDTH = 50
GCN_LAYERS = 2
GIN_LAYERS = 5
GCN_DROPOUT = 0.1
INIT_STD = 0.02

DropFn = Callable[[Tensor, float], Tensor]


def _no_dropout(t: Tensor, rate: float) -> Tensor:
    return t


def _normal(rng, *shape):
    return nc.parameter(rng.normal(0.0, INIT_STD, shape))


@dataclass
class GcnLayerParams:
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor
    W3: Tensor
    b3: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    dropout: float = GCN_DROPOUT

    @classmethod
    def init(cls, width: int = WIDTH, rng=None, dropout: float = GCN_DROPOUT) -> "GcnLayerParams":
        rng = np.random.default_rng(0) if rng is None else rng
        return cls(
            _normal(rng, width, width),
            _normal(rng, width),
            _normal(rng, width, width),
            _normal(rng, width),
            _normal(rng, width, width),
            _normal(rng, width),
            nc.parameter(np.ones(width)),
            nc.parameter(np.zeros(width)),
            nc.parameter(np.ones(width)),
            nc.parameter(np.zeros(width)),
            dropout,
        )

    @property
    def width(self) -> int:
        return self.W1.shape[0]

    def named(self) -> dict[str, Tensor]:
        names = ("W1", "b1", "W2", "b2", "W3", "b3", "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias")
        return {k: getattr(self, k) for k in names}


def _aggregation_operators(graph: CorefGraph, self_message: bool) -> tuple[np.ndarray, np.ndarray]:
    adj = graph.adjacency(symmetric=True)
    deg = adj.sum(axis=1)
    has_nb = (deg > 0).astype(np.float64)
    if self_message:
        # literal reading: every neighbour contributes the node's own message
        op = np.diag(has_nb)
    else:
        op = adj / np.where(deg > 0, deg, 1.0)[:, None]
    return op, has_nb[:, None]


def gcn_layer(
    H: Tensor,
    graph: CorefGraph,
    params: GcnLayerParams,
    dropout: DropFn | None = None,
    self_message: bool = False,
) -> Tensor:
    """One residual GCN layer: feed-forward block, then neighbourhood mean aggregation.

    Nodes without neighbours receive a zero aggregation (the bias is skipped
    for them too), so the layer reduces to ``LN(v)`` on an edgeless graph.
    """
    if H.ndim != 2 or H.shape[0] != graph.n:
        raise ShapeError(f"H has shape {H.shape} but the graph has {graph.n} nodes")
    drop = dropout or _no_dropout
    U = nc.matmul(nc.relu(nc.matmul(H, params.W1) + params.b1), params.W2) + params.b2
    V = nc.layer_norm(H + drop(U, params.dropout), params.ln1_gain, params.ln1_bias)
    op, has_nb = _aggregation_operators(graph, self_message)
    msg = nc.matmul(nc.Tensor(op), nc.matmul(V, params.W3))
    bias = nc.matmul(nc.Tensor(has_nb), nc.reshape(params.b3, (1, params.width)))
    W = nc.relu(msg + bias)
    return nc.layer_norm(drop(W, params.dropout) + V, params.ln2_gain, params.ln2_bias)


def gcn_encode(
    H: Tensor,
    graph: CorefGraph,
    layers: Sequence[GcnLayerParams],
    dropout: DropFn | None = None,
    self_message: bool = False,
) -> Tensor:
    """Stack of :func:`gcn_layer`; returns the final sentence representations ``R``."""
    out = H
    for p in layers:
        out = gcn_layer(out, graph, p, dropout, self_message)
    return out


@dataclass
class GinLayerParams:
    """``MLP(x) = relu(BN(x Wa + ba)) Wb + bb``.

    BN uses the statistics of every node in the batch, which strips the
    component all graphs share and keeps five stacked layers from washing
    out at small initial weights.
    """

    Wa: Tensor
    ba: Tensor
    bn_gain: Tensor
    bn_bias: Tensor
    Wb: Tensor
    bb: Tensor

    def named(self) -> dict[str, Tensor]:
        names = ("Wa", "ba", "bn_gain", "bn_bias", "Wb", "bb")
        return {k: getattr(self, k) for k in names}

    def mlp(self, x: Tensor) -> Tensor:
        hidden = nc.batch_norm(nc.matmul(x, self.Wa) + self.ba, self.bn_gain, self.bn_bias)
        return nc.matmul(nc.relu(hidden), self.Wb) + self.bb


@dataclass
class GinParams:
    layers: list[GinLayerParams]
    eps: float = 0.0

    @classmethod
    def init(cls, width: int = WIDTH, n_layers: int = GIN_LAYERS, rng=None) -> "GinParams":
        rng = np.random.default_rng(0) if rng is None else rng
        layers = [
            GinLayerParams(
                _normal(rng, width, width),
                _normal(rng, width),
                nc.parameter(np.ones(width)),
                nc.parameter(np.zeros(width)),
                _normal(rng, width, width),
                _normal(rng, width),
            )
            for _ in range(n_layers)
        ]
        return cls(layers)

    def named(self) -> dict[str, Tensor]:
        out = {}
        for li, layer in enumerate(self.layers):
            for k, v in layer.named().items():
                out[f"layer{li}.{k}"] = v
        return out

    def tensors(self) -> list[Tensor]:
        return list(self.named().values())

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray], eps: float = 0.0) -> "GinParams":
        """Rebuild constant (non-trainable) parameters in :meth:`named` order."""
        it = iter(arrays)
        layers = []
        for _ in range(len(arrays) // 6):
            layers.append(GinLayerParams(*(nc.Tensor(next(it)) for _ in range(6))))
        return cls(layers, eps)


def _block_propagation(graphs: Sequence[CorefGraph], eps: float) -> tuple[np.ndarray, np.ndarray]:
    sizes = [g.n for g in graphs]
    total = sum(sizes)
    prop = np.zeros((total, total))
    pool = np.zeros((len(graphs), total))
    off = 0
    for b, g in enumerate(graphs):
        prop[off : off + g.n, off : off + g.n] = g.adjacency(symmetric=True) + (1.0 + eps) * np.eye(g.n)
        pool[b, off : off + g.n] = 1.0 / g.n
        off += g.n
    return prop, pool


def gin_encode_batch(Hs: Sequence[Tensor], graphs: Sequence[CorefGraph], params: GinParams) -> Tensor:
    """Node embeddings for a batch, treated as one disjoint-union graph.

    Each layer computes ``h <- MLP((1+eps) h + sum of neighbours)``.
    Returns the stacked node matrix (graphs in order).
    """
    if len(Hs) != len(graphs) or not Hs:
        raise ShapeError(f"{len(Hs)} node matrices for {len(graphs)} graphs")
    for H, g in zip(Hs, graphs):
        if H.ndim != 2 or H.shape[0] != g.n:
            raise ShapeError(f"H has shape {H.shape} but the graph has {g.n} nodes")
    prop, _ = _block_propagation(graphs, params.eps)
    x = Hs[0] if len(Hs) == 1 else nc.concat(Hs, axis=0)
    prop_t = nc.Tensor(prop)
    for layer in params.layers:
        x = layer.mlp(nc.matmul(prop_t, x))
    return x


def gin_readouts(Hs: Sequence[Tensor], graphs: Sequence[CorefGraph], params: GinParams) -> Tensor:
    """Mean-over-nodes readout of every graph in the batch, ``(B, width)``."""
    nodes = gin_encode_batch(Hs, graphs, params)
    _, pool = _block_propagation(graphs, params.eps)
    return nc.matmul(nc.Tensor(pool), nodes)


def gin_encode(H: Tensor, graph: CorefGraph, params: GinParams) -> Tensor:
    """Node embeddings of a single graph (a batch of one)."""
    return gin_encode_batch([H], [graph], params)


def gin_readout(nodes: Tensor) -> Tensor:
    """Mean over nodes."""
    return nc.mean(nodes, axis=0)
