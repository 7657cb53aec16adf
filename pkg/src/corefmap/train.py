"""Training: combined objective, Adam, early stopping, label ingestion."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from . import numcore as nc
from .checkpoint import Checkpoint
from .coref import CorefGraph
from .corpus import Document, EmbeddingTable
from .errors import ConfigurationError, DomainError, ParseError, ValidationError
from .gem import PerturbConfig
from .model import MindMapModel, ModelConfig
from .numcore import DropoutStream, Tensor
from .relgraph import graph_mse

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "train_Lg", "train_Lc", "val_Lg", "seconds")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    lam: float = 0.001
    eta: float = 0.2
    tau: float = 0.5
    patience: int = 3
    max_epochs: int = 50
    seed: int = 0
    clip_norm: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    resample_perturbation: bool = True
    exclude_positive: bool = False

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "tau", "clip_norm"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("lam", "eta", "max_epochs"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        if self.patience < 1:
            raise ConfigurationError("patience must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class PseudoLabel:
    id: str
    y: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        n = self.y.shape[0]
        if self.y.shape != (n, n):
            raise ValidationError(f"label {self.id!r} is not square: {self.y.shape}")
        if np.any(self.y < 0) or np.any(self.y > 1):
            raise ValidationError(f"label {self.id!r} has entries outside [0, 1]")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def to_json(self) -> dict:
        return {"id": self.id, "n": self.n, "y": [float(v) for v in self.y.reshape(-1)]}


def load_labels(path) -> dict[str, PseudoLabel]:
    """JSON lines ``{"id": ..., "n": ..., "y": [row-major n*n values]}``."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                n = int(obj["n"])
                y = np.array(obj["y"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"malformed label line: {exc}", path, lineno) from exc
            if y.size != n * n:
                raise ParseError(f"label has {y.size} values, expected {n * n}", path, lineno)
            out[str(obj["id"])] = PseudoLabel(str(obj["id"]), y.reshape(n, n))
    return out


def save_labels(labels: Iterable[PseudoLabel], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lab in labels:
            fh.write(json.dumps(lab.to_json()) + "\n")


def stable_seed(*parts) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def tree_to_label(parents: Sequence[int | None], parent_score: float = 0.9, other: float = 0.1) -> np.ndarray:
    """Target matrix for a tree: ``parent_score`` on parent->child cells, zero diagonal."""
    n = len(parents)
    y = np.full((n, n), other)
    np.fill_diagonal(y, 0.0)
    for child, par in enumerate(parents):
        if par is not None:
            y[par, child] = parent_score
    return y


def synth_labels(document: Document, seed: int = 0) -> PseudoLabel:
    """Random recursive tree label: each sentence picks a parent uniformly among earlier ones."""
    rng = np.random.default_rng(stable_seed(document.id, seed))
    parents: list[int | None] = [None]
    for j in range(1, document.n):
        parents.append(int(rng.integers(0, j)))
    return PseudoLabel(document.id, tree_to_label(parents))


# ---------------------------------------------------------------------------
# Optimiser
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    b1, b2 = betas
    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for k in grads:
            grads[k] = grads[k] * scale
    return total


def total_loss(G, Y, L_c, lam: float) -> Tensor:
    """Graph-fitting MSE plus ``lam`` times the contrastive loss."""
    L_g = graph_mse(G, Y)
    if lam == 0.0:
        return L_g
    return L_g + nc.mul(nc.as_tensor(L_c), lam)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class Example:
    document: Document
    graph: CorefGraph
    label: PseudoLabel

    def __post_init__(self):
        if self.label.n != self.document.n:
            raise ValidationError(
                f"label for {self.document.id!r} is {self.label.n}x{self.label.n}, "
                f"document has {self.document.n} sentences"
            )
        if self.graph.n != self.document.n:
            raise ValidationError(f"coreference graph for {self.document.id!r} has wrong size")


def make_examples(
    documents: Sequence[Document],
    graphs: dict[str, CorefGraph],
    labels: dict[str, PseudoLabel],
) -> list[Example]:
    out = []
    for d in documents:
        if d.id not in labels:
            raise ConfigurationError(f"no pseudo label for document {d.id!r}")
        if d.id not in graphs:
            raise ConfigurationError(f"no coreference clusters for document {d.id!r}")
        out.append(Example(d, graphs[d.id], labels[d.id]))
    return out


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[dict]
    best_epoch: int | None
    model: MindMapModel


def make_checkpoint(model: MindMapModel, state: AdamState, config: TrainConfig) -> Checkpoint:
    moments = {}
    for k in model.named_parameters():
        if k in state.m:
            moments[f"adam_m/{k}"] = state.m[k].copy()
            moments[f"adam_v/{k}"] = state.v[k].copy()
    meta = {"train": asdict(config), "model": model.config_dict()}
    return Checkpoint(model.state_arrays(), moments, state.step, meta)


def model_from_checkpoint(ckpt: Checkpoint) -> MindMapModel:
    model = MindMapModel(ModelConfig.from_dict(ckpt.config.get("model", {})))
    model.load_arrays(ckpt.params)
    return model


def adam_state_from_checkpoint(ckpt: Checkpoint) -> AdamState:
    state = AdamState(step=ckpt.step)
    for k, v in ckpt.moments.items():
        kind, name = k.split("/", 1)
        (state.m if kind == "adam_m" else state.v)[name] = v.copy()
    return state


def batch_losses(
    model: MindMapModel,
    batch: Sequence[Example],
    table: EmbeddingTable,
    config: TrainConfig,
    step: int,
    training: bool = True,
) -> tuple[Tensor, Tensor | None, Tensor]:
    """Return ``(L_g, L_c or None, total)`` for one batch."""
    dropout = DropoutStream(stable_seed("dropout", config.seed, step), training=training)
    docs = [ex.document for ex in batch]
    Hs = model.encode(docs, table, batched=True)
    per_doc = [
        graph_mse(model.scores_from_h(H, ex.graph, dropout), ex.label.y) for H, ex in zip(Hs, batch)
    ]
    L_g = per_doc[0] if len(per_doc) == 1 else nc.mean(nc.stack(per_doc))
    L_c = None
    if config.lam > 0 and len(batch) >= 2:
        perturb = PerturbConfig(config.eta, config.seed, config.resample_perturbation)
        try:
            L_c = model.contrastive_loss(
                Hs, [ex.graph for ex in batch], perturb, config.tau, step, config.exclude_positive
            )
        except DomainError as exc:
            # a projection whose ReLU layer is silent for some graph has no direction
            logger.warning("step %d: contrastive term skipped (%s)", step, exc)
    total = L_g if L_c is None else L_g + nc.mul(L_c, config.lam)
    return L_g, L_c, total


def evaluate_lg(model: MindMapModel, examples: Sequence[Example], table: EmbeddingTable) -> float:
    """Mean per-document graph MSE in evaluation mode."""
    if not examples:
        return float("nan")
    Hs = model.encode([ex.document for ex in examples], table, batched=True)
    vals = [graph_mse(model.scores_from_h(H, ex.graph), ex.label.y).item() for H, ex in zip(Hs, examples)]
    return float(np.mean(vals))


def train(
    train_set: Sequence[Example],
    val_set: Sequence[Example],
    table: EmbeddingTable,
    config: TrainConfig,
    model_config: ModelConfig | None = None,
    model: MindMapModel | None = None,
    val_metric=None,
) -> TrainResult:
    """Fit the model with early stopping on validation loss.

    ``val_metric(model) -> float`` (higher is better) replaces validation
    ``L_g`` as the stopping signal when given.
    """
    if not train_set:
        raise ConfigurationError("empty training set")
    if not val_set and val_metric is None:
        raise ConfigurationError("a validation split is required")
    for ex in train_set:
        ex.document.check_trainable()
    model = model or MindMapModel(model_config, seed=config.seed)
    params = model.named_parameters()
    state = AdamState()
    best = make_checkpoint(model, state, config)
    best_score = -math.inf
    best_epoch = None
    stale = 0
    log: list[dict] = []

    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train_set))
        lg_sum = lc_sum = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = [train_set[i] for i in order[start : start + config.batch_size]]
            model.zero_grad()
            L_g, L_c, total = batch_losses(model, batch, table, config, state.step)
            nc.backward(total)
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            clip_global_norm(grads, config.clip_norm)
            adam_step(params, grads, state, config.learning_rate, (config.beta1, config.beta2), config.adam_eps)
            lg_sum += L_g.item()
            lc_sum += 0.0 if L_c is None else L_c.item()
            n_batches += 1
        model.zero_grad()
        val_lg = evaluate_lg(model, val_set, table) if val_set else float("nan")
        score = val_metric(model) if val_metric is not None else -val_lg
        row = {
            "epoch": epoch,
            "train_Lg": lg_sum / n_batches,
            "train_Lc": lc_sum / n_batches,
            "val_Lg": val_lg,
            "seconds": time.perf_counter() - t0,
        }
        log.append(row)
        logger.info("epoch %d train_Lg=%.6f val_Lg=%.6f", epoch, row["train_Lg"], val_lg)
        if score > best_score:
            best_score = score
            best_epoch = epoch
            best = make_checkpoint(model, state, config)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    final = model_from_checkpoint(best)
    return TrainResult(best, log, best_epoch, final)


def write_metrics(log: Sequence[dict], path, include_seconds: bool = True) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for row in log:
            writer.writerow(
                [
                    row["epoch"],
                    repr(row["train_Lg"]),
                    repr(row["train_Lc"]),
                    repr(row["val_Lg"]),
                    f"{row['seconds']:.3f}" if include_seconds else "0",
                ]
            )
