"""Graph enhancement: contrast a GIN encoder against a weight-perturbed copy of itself.

Both encoders read the same coreference graph and sentence matrix; the pair
of graph embeddings from one document is a positive pair, embeddings of the
other documents in the batch act as negatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numcore as nc
from .coref import CorefGraph
from .errors import ConfigurationError, DomainError, ShapeError
from .graphenc import GinParams, gin_readouts
from .numcore import Tensor

DEFAULT_ETA = 0.2
DEFAULT_TAU = 0.5
INIT_STD = 0.02


@dataclass
class PerturbConfig:
    eta: float = DEFAULT_ETA
    seed: int = 0
    resample_each_step: bool = True

    def __post_init__(self):
        if self.eta < 0:
            raise ConfigurationError(f"eta must be non-negative, got {self.eta}")


@dataclass
class ProjectionParams:
    """Two bias-free layers; matrices are stored input-major (``h @ W``)."""

    W5: Tensor
    W6: Tensor

    @classmethod
    def init(cls, width: int = 50, hidden: int = 50, out: int = 50, rng=None) -> "ProjectionParams":
        rng = np.random.default_rng(0) if rng is None else rng
        return cls(
            nc.parameter(rng.normal(0.0, INIT_STD, (width, hidden))),
            nc.parameter(rng.normal(0.0, INIT_STD, (hidden, out))),
        )

    def named(self) -> dict[str, Tensor]:
        return {"W5": self.W5, "W6": self.W6}

    def frozen(self) -> "ProjectionParams":
        return ProjectionParams(self.W5.detach(), self.W6.detach())


def perturb(base: GinParams, config: PerturbConfig, step: int = 0) -> GinParams:
    """Add ``eta * N(0, std(theta)^2)`` noise to every parameter tensor of ``base``.

    The noise for tensor ``l`` is drawn from a generator seeded with
    ``(seed, step, l)``.  The result is detached from the autodiff graph.
    """
    if not config.resample_each_step:
        step = 0
    arrays = []
    for layer_idx, theta in enumerate(base.tensors()):
        data = theta.data
        sigma = float(data.std())
        if config.eta == 0.0 or sigma == 0.0:
            arrays.append(data.copy())
            continue
        rng = np.random.default_rng([int(config.seed), int(step), layer_idx])
        delta = rng.normal(0.0, sigma, data.shape)
        arrays.append(data + config.eta * delta)
    return GinParams.from_arrays(arrays, base.eps)


def project(h: Tensor, params: ProjectionParams) -> Tensor:
    """``relu(h W5) W6`` for a vector ``(d,)`` or a batch of rows ``(B, d)``."""
    h = nc.as_tensor(h)
    if h.shape[-1] != params.W5.shape[0]:
        raise ShapeError(f"projection input width {h.shape[-1]} != {params.W5.shape[0]}")
    rows = h if h.ndim == 2 else nc.reshape(h, (1, h.shape[0]))
    z = nc.matmul(nc.relu(nc.matmul(rows, params.W5)), params.W6)
    return z if h.ndim == 2 else nc.reshape(z, (params.W6.shape[1],))


def nt_xent_terms(Z: Tensor, Zp: Tensor, tau: float = DEFAULT_TAU, exclude_positive: bool = False) -> Tensor:
    """Per-anchor losses ``l_i`` of the temperature-scaled cross entropy.

    Row ``i`` of ``Z`` is contrasted with every row of ``Zp``; row ``i`` of
    ``Zp`` is its positive.  With ``exclude_positive`` the positive is left
    out of the denominator.
    """
    Z, Zp = nc.as_tensor(Z), nc.as_tensor(Zp)
    if Z.ndim != 2 or Z.shape != Zp.shape:
        raise ShapeError(f"nt_xent needs equal (B, d) inputs, got {Z.shape} and {Zp.shape}")
    B = Z.shape[0]
    if B < 2:
        raise ConfigurationError("nt_xent needs at least two examples (no negatives otherwise)")
    if tau <= 0:
        raise ConfigurationError(f"temperature must be positive, got {tau}")
    for name, m in (("Z", Z.data), ("Z'", Zp.data)):
        if np.any((m * m).sum(axis=1) == 0.0):
            raise DomainError(f"zero vector in {name}; cosine similarity undefined")
    sim = nc.cosine_matrix(Z, Zp)
    logits = nc.mul(sim, 1.0 / tau)
    eye = np.eye(B)
    positive = nc.sum_(nc.mul(logits, eye), axis=1)
    if exclude_positive:
        logits = logits + nc.Tensor(np.where(eye > 0, -np.inf, 0.0))
    return nc.logsumexp_rows(logits) - positive


def nt_xent(Z: Tensor, Zp: Tensor, tau: float = DEFAULT_TAU, exclude_positive: bool = False) -> Tensor:
    """Sum of :func:`nt_xent_terms` over all anchors."""
    return nc.sum_(nt_xent_terms(Z, Zp, tau, exclude_positive))


def graph_embeddings(
    Hs: Sequence[Tensor], graphs: Sequence[CorefGraph], gin: GinParams, proj: ProjectionParams
) -> Tensor:
    return project(gin_readouts(Hs, graphs, gin), proj)


def gem_loss(
    Hs: Sequence[Tensor],
    graphs: Sequence[CorefGraph],
    gin: GinParams,
    proj: ProjectionParams,
    config: PerturbConfig,
    tau: float = DEFAULT_TAU,
    step: int = 0,
    exclude_positive: bool = False,
) -> Tensor:
    """Contrastive loss over a batch of documents.

    Gradients reach the base GIN, the projection head and ``Hs``; the
    perturbed branch is a constant target.
    """
    if len(Hs) != len(graphs):
        raise ShapeError(f"{len(Hs)} sentence matrices but {len(graphs)} graphs")
    if len(Hs) < 2:
        raise ConfigurationError("the contrastive loss needs a batch of at least two documents")
    Z = graph_embeddings(Hs, graphs, gin, proj)
    vice = perturb(gin, config, step)
    Zp = graph_embeddings([H.detach() for H in Hs], graphs, vice, proj.frozen())
    return nt_xent(Z, Zp, tau, exclude_positive)


def closed_form_orthogonal_pair(tau: float = DEFAULT_TAU) -> float:
    """Loss for two orthogonal anchors that match their positives exactly."""
    return 2.0 * math.log1p(math.exp(-1.0 / tau))
