"""The full relation-graph network and its parameter registry."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import numcore as nc
from .coref import CorefGraph
from .corpus import Document, EmbeddingTable
from .encoder import BiLstmParams, encode_document, encode_documents_batched
from .gem import PerturbConfig, ProjectionParams, gem_loss
from .graphenc import GcnLayerParams, GinParams, gcn_encode
from .numcore import DropoutStream, Tensor
from .relgraph import BiaffineParams, RelationGraph, relation_scores


@dataclass
class ModelConfig:
    embedding_dim: int = 50
    hidden_size: int = 25
    gcn_layers: int = 2
    gin_layers: int = 5
    proj_width: int = 50
    gcn_dropout: float = 0.1
    self_message: bool = False
    use_gcn: bool = True

    @property
    def width(self) -> int:
        return 2 * self.hidden_size

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


class MindMapModel:
    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        self.config = config = config or ModelConfig()
        rng = np.random.default_rng(seed)
        w = config.width
        self.word_lstm = BiLstmParams.init(config.embedding_dim, config.hidden_size, rng)
        self.sent_lstm = BiLstmParams.init(w, config.hidden_size, rng)
        self.gcn = [GcnLayerParams.init(w, rng, config.gcn_dropout) for _ in range(config.gcn_layers)]
        self.biaffine = BiaffineParams.init(w, config.proj_width, rng)
        self.gin = GinParams.init(w, config.gin_layers, rng)
        self.proj = ProjectionParams.init(w, w, w, rng)

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}

        def put(prefix, named):
            for k, v in named.items():
                out[f"{prefix}.{k}"] = v

        put("word_lstm", self.word_lstm.named())
        put("sent_lstm", self.sent_lstm.named())
        for i, layer in enumerate(self.gcn):
            put(f"gcn{i}", layer.named())
        put("biaffine", self.biaffine.named())
        put("gin", self.gin.named())
        put("proj", self.proj.named())
        return out

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)[:5]}")
        for k, p in params.items():
            if arrays[k].shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {arrays[k].shape} vs {p.shape}")
            p.data = np.array(arrays[k], dtype=np.float64)

    # ---- forward -------------------------------------------------------
    def encode(
        self, documents: Sequence[Document], table: EmbeddingTable, batched: bool = True
    ) -> list[Tensor]:
        if batched:
            return encode_documents_batched(documents, table, self.word_lstm, self.sent_lstm)
        return [encode_document(d, table, self.word_lstm, self.sent_lstm) for d in documents]

    def scores_from_h(
        self, H: Tensor, graph: CorefGraph, dropout: DropoutStream | None = None
    ) -> Tensor:
        R = H
        if self.config.use_gcn:
            R = gcn_encode(H, graph, self.gcn, dropout, self.config.self_message)
        return relation_scores(R, self.biaffine)

    def contrastive_loss(
        self,
        Hs: Sequence[Tensor],
        graphs: Sequence[CorefGraph],
        perturb: PerturbConfig,
        tau: float,
        step: int,
        exclude_positive: bool = False,
    ) -> Tensor:
        return gem_loss(Hs, graphs, self.gin, self.proj, perturb, tau, step, exclude_positive)

    def predict(
        self, document: Document, graph: CorefGraph, table: EmbeddingTable, batched: bool = False
    ) -> RelationGraph:
        """Evaluation-mode relation graph for one document."""
        H = self.encode([document], table, batched)[0]
        G = self.scores_from_h(H, graph)
        return RelationGraph(document.n, G.data.copy(), document.id)

    def predict_many(
        self, documents: Sequence[Document], graphs: Sequence[CorefGraph], table: EmbeddingTable
    ) -> list[RelationGraph]:
        Hs = self.encode(documents, table, batched=True)
        return [
            RelationGraph(d.n, self.scores_from_h(H, g).data.copy(), d.id)
            for d, H, g in zip(documents, Hs, graphs)
        ]

    def config_dict(self) -> dict:
        return asdict(self.config)
