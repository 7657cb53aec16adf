"""Finite-difference gradient suite for every differentiable operation.

Each case builds a scalar function of a few leaf tensors from a seed.  Small
cases compare every coordinate of the analytic gradient against central
differences; the composed model path compares directional derivatives along
random directions, which covers all coordinates at a fraction of the cost.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numcore as nc
from .coref import CorefGraph
from .corpus import Document, EmbeddingTable
from .encoder import LstmDirection, lstm_direction
from .gem import ProjectionParams, graph_embeddings, nt_xent
from .graphenc import GinParams, gin_readouts
from .model import MindMapModel, ModelConfig
from .numcore import DropoutStream, Tensor
from .relgraph import graph_mse

TOLERANCE = 1e-3
STEP = 1e-5

Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Tensor]]]


@dataclass
class CheckResult:
    name: str
    seed: int
    error: float
    passed: bool


def _leaf(rng, *shape, away_from_zero: bool = False) -> Tensor:
    x = rng.normal(size=shape)
    if away_from_zero:
        # keep kinks (relu, clip, max) out of reach of the finite-difference step
        x = np.where(np.abs(x) < 0.05, np.sign(x + 1e-12) * 0.05 + x, x)
    return nc.parameter(x)


def _unary(op) -> Case:
    def build(rng):
        x = _leaf(rng, 4, 3, away_from_zero=True)
        w = rng.normal(size=(4, 3))
        return (lambda: nc.sum_(nc.mul(op(x), w))), [x]

    return build


def _binary(op, b_shape=(4, 3)) -> Case:
    def build(rng):
        a, b = _leaf(rng, 4, 3), _leaf(rng, *b_shape)
        w = rng.normal(size=(4, 3))
        return (lambda: nc.sum_(nc.mul(op(a, b), w))), [a, b]

    return build


def _case_matmul(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 2)
    w = rng.normal(size=(3, 2))
    return (lambda: nc.sum_(nc.mul(nc.matmul(a, b), w))), [a, b]


def _case_log(rng):
    x = nc.parameter(rng.uniform(0.5, 2.0, size=(3, 3)))
    w = rng.normal(size=(3, 3))
    return (lambda: nc.sum_(nc.mul(nc.log(x), w))), [x]


def _case_clip(rng):
    x = _leaf(rng, 4, 4)
    x.data = np.where(np.abs(np.abs(x.data) - 0.5) < 0.05, x.data + 0.1, x.data)
    w = rng.normal(size=(4, 4))
    return (lambda: nc.sum_(nc.mul(nc.clip(x, -0.5, 0.5), w))), [x]


def _reduction(op, axis) -> Case:
    def build(rng):
        x = _leaf(rng, 4, 3)
        w = rng.normal(size=op(x, axis).shape)
        return (lambda: nc.sum_(nc.mul(op(x, axis), w))), [x]

    return build


def _case_logsumexp(rng):
    x = _leaf(rng, 3, 5)
    w = rng.normal(size=3)
    return (lambda: nc.sum_(nc.mul(nc.logsumexp_rows(x), w))), [x]


def _case_shapes(rng):
    a, b = _leaf(rng, 2, 3), _leaf(rng, 3, 3)
    w = rng.normal(size=(3, 5))

    def fn():
        cat = nc.concat([a, b], axis=0)  # (5, 3)
        st = nc.stack([nc.take_rows(cat, [4, 0, 2]), nc.take_cols(nc.transpose(cat), 0, 3)])  # (2, 3, 3)
        flat = nc.reshape(st, (3, 6))
        return nc.sum_(nc.mul(nc.take_cols(flat, 1, 6), w))

    return fn, [a, b]


def _norm_case(op) -> Case:
    def build(rng):
        x, g, b = _leaf(rng, 5, 4), _leaf(rng, 4), _leaf(rng, 4)
        w = rng.normal(size=(5, 4))
        return (lambda: nc.sum_(nc.mul(op(x, g, b), w))), [x, g, b]

    return build


def _case_normalize(rng):
    x = _leaf(rng, 3, 4)
    w = rng.normal(size=(3, 4))
    return (lambda: nc.sum_(nc.mul(nc.normalize_rows(x), w))), [x]


def _case_cosine(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 5, 4)
    w = rng.normal(size=(3, 5))
    return (lambda: nc.sum_(nc.mul(nc.cosine_matrix(a, b), w))), [a, b]


def _case_dropout(rng):
    x = _leaf(rng, 4, 5)
    w = rng.normal(size=(4, 5))
    seed = int(rng.integers(1 << 30))
    return (lambda: nc.sum_(nc.mul(nc.dropout(x, 0.3, seed, True), w))), [x]


def _case_lstm(rng):
    params = LstmDirection.init(3, 2, rng)
    for p in (params.W_ih, params.W_hh, params.b):
        p.data = rng.normal(0.0, 0.5, p.shape)
    X = _leaf(rng, 2, 4, 3)
    w = rng.normal(size=(2, 4, 2))
    reverse = bool(rng.integers(2))
    fn = lambda: nc.sum_(nc.mul(lstm_direction(X, [4, 2], params, reverse), w))
    return fn, [X, params.W_ih, params.W_hh, params.b]


def _case_nt_xent(rng):
    Z, Zp = _leaf(rng, 4, 3), _leaf(rng, 4, 3)
    return (lambda: nt_xent(Z, Zp, 0.5)), [Z, Zp]


def _case_gin_projection(rng):
    width = 6
    gin = GinParams.init(width, 2, rng)
    for p in gin.tensors():
        p.data = p.data + rng.normal(0.0, 0.3, p.shape)
    proj = ProjectionParams.init(width, width, width, rng)
    Hs = [_leaf(rng, 3, width), _leaf(rng, 2, width), _leaf(rng, 4, width)]
    graphs = [
        CorefGraph(3, frozenset({(0, 2)})),
        CorefGraph(2, frozenset({(0, 1)})),
        CorefGraph(4, frozenset({(0, 1), (1, 3)})),
    ]
    readouts = gin_readouts(Hs, graphs, gin)
    while True:
        # redraw until every graph keeps several ReLU units alive; with a single
        # live unit the projections are parallel and the loss is locally flat
        proj.W5.data = rng.normal(0, 0.5, (width, width))
        proj.W6.data = rng.normal(0, 0.5, (width, width))
        hidden = nc.matmul(readouts, proj.W5).data
        if np.all((hidden > 1e-2).sum(axis=1) >= 2):
            break
    target = Tensor(rng.normal(size=(3, width)))
    fn = lambda: nt_xent(graph_embeddings(Hs, graphs, gin, proj), target, 0.5)
    return fn, Hs + gin.tensors() + [proj.W5, proj.W6]


CASES: dict[str, Case] = {
    "add": _binary(nc.add),
    "add_row_broadcast": _binary(nc.add, (3,)),
    "sub": _binary(nc.sub),
    "mul": _binary(nc.mul),
    "mul_row_broadcast": _binary(nc.mul, (3,)),
    "matmul": _case_matmul,
    "sigmoid": _unary(nc.sigmoid),
    "tanh": _unary(nc.tanh),
    "relu": _unary(nc.relu),
    "exp": _unary(nc.exp),
    "log": _case_log,
    "clip": _case_clip,
    "sum_all": _reduction(lambda t, a: nc.sum_(t, a), None),
    "sum_axis0": _reduction(lambda t, a: nc.sum_(t, a), 0),
    "mean_axis1": _reduction(lambda t, a: nc.mean(t, a), 1),
    "max_axis0": _reduction(lambda t, a: nc.max_over_axis(t, a), 0),
    "logsumexp_rows": _case_logsumexp,
    "shape_ops": _case_shapes,
    "layer_norm": _norm_case(nc.layer_norm),
    "batch_norm": _norm_case(nc.batch_norm),
    "normalize_rows": _case_normalize,
    "cosine_matrix": _case_cosine,
    "dropout": _case_dropout,
    "lstm_fused": _case_lstm,
    "nt_xent": _case_nt_xent,
    "gin_projection": _case_gin_projection,
}


def _tiny_model(seed: int) -> tuple[MindMapModel, Document, CorefGraph, EmbeddingTable, np.ndarray]:
    rng = np.random.default_rng([seed, 7])
    cfg = ModelConfig(embedding_dim=4, hidden_size=3, gcn_layers=2, gin_layers=2, proj_width=5)
    model = MindMapModel(cfg, seed=seed)
    for p in model.named_parameters().values():
        # larger weights than the training initialisation so every path carries signal
        p.data = p.data + rng.normal(0.0, 0.3, p.shape)
    words = ["w0", "w1", "w2", "w3", "w4"]
    table = EmbeddingTable(4, {w: rng.normal(size=4) for w in words})
    doc = Document("g", [["w0", "w1", "w2"], ["w3", "w1"], ["w4", "w0", "w2", "w3"]])
    graph = CorefGraph(3, frozenset({(0, 1), (0, 2)}))
    Y = rng.uniform(0.05, 0.95, (3, 3))
    return model, doc, graph, table, Y


def composed_path_error(seed: int, directions: int = 3, step: float = STEP) -> float:
    """Worst directional-derivative error of encoder -> GCN -> biaffine -> MSE."""
    model, doc, graph, table, Y = _tiny_model(seed)
    params = model.named_parameters()
    drop_seed = 1000 + seed

    def loss() -> Tensor:
        H = model.encode([doc], table, batched=False)[0]
        return graph_mse(model.scores_from_h(H, graph, DropoutStream(drop_seed, True)), Y)

    model.zero_grad()
    nc.backward(loss())
    grads = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    rng = np.random.default_rng([seed, 11])
    worst = 0.0
    for name, p in params.items():
        if name.startswith(("gin.", "proj.")):
            continue  # not on this path; covered by gin_projection
        base = p.data.copy()
        for _ in range(directions):
            v = rng.normal(size=base.shape)
            p.data = base + step * v
            up = loss().item()
            p.data = base - step * v
            down = loss().item()
            p.data = base
            numeric = (up - down) / (2 * step)
            analytic = float((grads[name] * v).sum())
            scale = max(abs(numeric), abs(analytic))
            err = 0.0 if scale < 1e-10 else abs(numeric - analytic) / scale
            worst = max(worst, err)
    return worst


def run_suite(seeds: int = 20, tolerance: float = TOLERANCE, step: float = STEP) -> list[CheckResult]:
    results = []
    for seed in range(seeds):
        for name, build in CASES.items():
            fn, inputs = build(np.random.default_rng([seed, sum(map(ord, name))]))
            err = nc.check_gradients(fn, inputs, step)
            results.append(CheckResult(name, seed, err, err <= tolerance))
        err = composed_path_error(seed, step=step)
        results.append(CheckResult("encoder_gcn_biaffine_mse", seed, err, err <= tolerance))
    return results


def summarize(results: list[CheckResult]) -> dict[str, float]:
    worst: dict[str, float] = {}
    for r in results:
        worst[r.name] = max(worst.get(r.name, 0.0), r.error)
    return worst


if __name__ == "__main__":  # pragma: no cover
    t0 = time.perf_counter()
    res = run_suite()
    for k, v in summarize(res).items():
        print(f"{k:28s} {v:.3e}")
    print(f"{sum(r.passed for r in res)}/{len(res)} passed in {time.perf_counter() - t0:.1f}s")
