from __future__ import annotations

import numpy as np
import pytest

from corefmap.corpus import Document, EmbeddingTable
from corefmap.model import ModelConfig
from corefmap.synthetic import generate_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(6, seed=5, min_sentences=3, max_sentences=6)


@pytest.fixture
def tiny_config():
    return ModelConfig(embedding_dim=6, hidden_size=4, gcn_layers=2, gin_layers=2, proj_width=5)


@pytest.fixture
def tiny_table():
    r = np.random.default_rng(99)
    words = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "the", "."]
    return EmbeddingTable(6, {w: r.normal(size=6) for w in words})


@pytest.fixture
def tiny_doc():
    return Document(
        "t1",
        [
            ["alpha", "beta", "."],
            ["gamma", "the", "alpha"],
            ["delta", "epsilon", "zeta", "."],
            ["beta", "unknown"],
        ],
    )
