"""Biaffine scoring of sentence pairs into a governing-score matrix."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import numcore as nc
from .errors import ParseError, ShapeError, ValidationError
from .numcore import Tensor

PROJ_WIDTH = 50
INIT_STD = 0.02
# sigmoid(36) < 1 in float64; beyond this the score would round to exactly 0 or 1
LOGIT_LIMIT = 36.0


@dataclass
class BiaffineParams:
    W_start: Tensor
    b_start: Tensor
    W_end: Tensor
    b_end: Tensor
    W4: Tensor
    b4: Tensor  # shape (1,)

    @classmethod
    def init(cls, width: int = 50, proj: int = PROJ_WIDTH, rng=None) -> "BiaffineParams":
        rng = np.random.default_rng(0) if rng is None else rng
        n = lambda *s: nc.parameter(rng.normal(0.0, INIT_STD, s))
        return cls(n(width, proj), n(proj), n(width, proj), n(proj), n(proj, proj), n(1))

    @classmethod
    def zeros(cls, width: int = 50, proj: int = PROJ_WIDTH) -> "BiaffineParams":
        z = lambda *s: nc.parameter(np.zeros(s))
        return cls(z(width, proj), z(proj), z(width, proj), z(proj), z(proj, proj), z(1))

    def named(self) -> dict[str, Tensor]:
        names = ("W_start", "b_start", "W_end", "b_end", "W4", "b4")
        return {k: getattr(self, k) for k in names}


@dataclass
class RelationGraph:
    """``scores[i, j]`` is how strongly sentence ``i`` governs sentence ``j``."""

    n: int
    scores: np.ndarray
    id: str | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape != (self.n, self.n):
            raise ShapeError(f"scores shape {self.scores.shape} does not match n={self.n}")

    def check_open_unit(self) -> None:
        if not np.all((self.scores > 0.0) & (self.scores < 1.0)):
            raise ValidationError("relation scores must lie strictly inside (0, 1)")

    def to_json(self) -> dict:
        obj = {"n": self.n, "scores": [float(v) for v in self.scores.reshape(-1)]}
        if self.id is not None:
            obj = {"id": self.id, **obj}
        return obj

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, obj: dict) -> "RelationGraph":
        try:
            n = int(obj["n"])
            scores = np.array(obj["scores"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed relation graph: {exc}") from exc
        if scores.size != n * n:
            raise ParseError(f"relation graph has {scores.size} scores, expected {n * n}")
        return cls(n, scores.reshape(n, n), obj.get("id"))


def relation_logits(R: Tensor, params: BiaffineParams) -> Tensor:
    if R.ndim != 2 or R.shape[1] != params.W_start.shape[0]:
        raise ShapeError(f"R has shape {R.shape}, expected (N, {params.W_start.shape[0]})")
    start = nc.relu(nc.matmul(R, params.W_start) + params.b_start)
    end = nc.relu(nc.matmul(R, params.W_end) + params.b_end)
    return nc.matmul(nc.matmul(start, params.W4), nc.transpose(end)) + params.b4


def relation_scores(R: Tensor, params: BiaffineParams) -> Tensor:
    """Differentiable ``N x N`` sigmoid scores."""
    return nc.sigmoid(nc.clip(relation_logits(R, params), -LOGIT_LIMIT, LOGIT_LIMIT))


def relation_graph(R: Tensor, params: BiaffineParams, doc_id: str | None = None) -> RelationGraph:
    G = relation_scores(R, params)
    return RelationGraph(G.shape[0], G.data.copy(), doc_id)


def graph_mse(G: Tensor, Y) -> Tensor:
    """Mean of squared differences over all ``N^2`` entries, diagonal included."""
    G = nc.as_tensor(G)
    Y = nc.as_tensor(Y.scores if isinstance(Y, RelationGraph) else Y)
    if G.shape != Y.shape:
        raise ShapeError(f"graph_mse shape mismatch: {G.shape} vs {Y.shape}")
    d = G - Y
    return nc.mean(d * d)


def save_relation_graphs(graphs: Iterable[RelationGraph], path) -> None:
    """One JSON object per line, in the given order."""
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(g.dumps() + "\n")


def load_relation_graphs(path) -> dict[str, RelationGraph]:
    out: dict[str, RelationGraph] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                g = RelationGraph.from_json(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", path, lineno) from exc
            except (ParseError, ShapeError) as exc:
                raise ParseError(str(exc), path, lineno) from exc
            if g.id is None:
                raise ParseError("relation graph without an 'id'", path, lineno)
            if g.id in out:
                raise ParseError(f"duplicate relation graph id {g.id!r}", path, lineno)
            out[g.id] = g
    return out
