"""Synthetic documents with known governing trees for desk-scale experiments.

Each document is generated from a random tree over its sentences.  A child
sentence repeats some topic words of its parent and usually re-mentions the
entity its parent introduced, so lexical overlap and coreference both carry
(noisy) evidence about the tree.  Parents favour the lead sentence and the
immediately preceding one, as news articles tend to.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .coref import CorefClusters, MentionSpan, build_coref_graph, CorefGraph
from .corpus import Document, EmbeddingTable

FUNCTION_WORDS = ("the", "a", "of", "to", "in", "and", "was", "on", "for", "with", "that", "by")
_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "st")
_VOWELS = ("a", "e", "i", "o", "u")


@dataclass
class SyntheticDoc:
    document: Document
    parents: list[int | None]
    clusters: CorefClusters

    @property
    def graph(self) -> CorefGraph:
        return build_coref_graph(self.clusters, self.document.n)


@dataclass
class SyntheticCorpus:
    docs: list[SyntheticDoc]
    table: EmbeddingTable

    @property
    def documents(self) -> list[Document]:
        return [d.document for d in self.docs]


def _pseudo_words(rng: np.random.Generator, count: int, syllables: int, taken: set[str]) -> list[str]:
    words = []
    while len(words) < count:
        w = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(syllables))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def sample_tree(n: int, rng: np.random.Generator, p_root: float = 0.35, p_prev: float = 0.35) -> list[int | None]:
    parents: list[int | None] = [None]
    for j in range(1, n):
        u = rng.random()
        if u < p_root:
            parents.append(0)
        elif u < p_root + p_prev:
            parents.append(j - 1)
        else:
            parents.append(int(rng.integers(0, j)))
    return parents


def generate_document(
    doc_id: str,
    n: int,
    rng: np.random.Generator,
    content: Sequence[str],
    entities: Sequence[str],
    p_mention: float = 0.75,
    p_noise_mention: float = 0.15,
) -> SyntheticDoc:
    parents = sample_tree(n, rng)
    doc_words = list(rng.choice(content, size=4, replace=False))  # shared background vocabulary
    own_topics = []
    own_entity = []
    pool = list(rng.permutation(len(content)))
    ent_pool = list(rng.permutation(len(entities)))
    sentences: list[list[str]] = []
    mentions: dict[str, list[MentionSpan]] = {}
    for j in range(n):
        topic = [content[pool.pop()] for _ in range(3)]
        ent = entities[ent_pool.pop()]
        own_topics.append(topic)
        own_entity.append(ent)
        words: list[str] = []
        par = parents[j]
        if par is not None:
            words += list(rng.choice(own_topics[par], size=2, replace=False))
        words += topic[: 2 if par is not None else 3]
        words += list(rng.choice(doc_words, size=1))
        rng.shuffle(words)
        # interleave function words
        tokens: list[str] = []
        for w in words:
            tokens.append(str(rng.choice(FUNCTION_WORDS)))
            tokens.append(w)
        referenced = []
        if par is not None and rng.random() < p_mention:
            referenced.append(own_entity[par])
        elif j > 0 and rng.random() < p_noise_mention:
            referenced.append(own_entity[int(rng.integers(0, j))])
        referenced.append(ent)
        for e in referenced:
            pos = int(rng.integers(0, len(tokens) + 1))
            tokens.insert(pos, e)
        tokens.append(".")
        for k, tok in enumerate(tokens):
            if tok in referenced:
                mentions.setdefault(tok, []).append(MentionSpan(j, k, k))
        sentences.append(tokens)
    clusters = tuple(tuple(ms) for _, ms in sorted(mentions.items(), key=lambda kv: kv[1][0]) if len(ms) >= 2)
    return SyntheticDoc(Document(doc_id, sentences), parents, CorefClusters(clusters))


def make_table(words: Sequence[str], rng: np.random.Generator, dim: int = 50) -> EmbeddingTable:
    vecs = {w.lower(): rng.normal(0.0, 1.0 / np.sqrt(dim), dim) for w in words}
    return EmbeddingTable(dim, vecs)


def generate_corpus(
    n_docs: int,
    seed: int = 0,
    min_sentences: int = 5,
    max_sentences: int = 10,
    prefix: str = "doc",
    vocab_seed: int | None = None,
) -> SyntheticCorpus:
    """Build ``n_docs`` documents and an embedding table covering their vocabulary.

    Corpora sharing ``vocab_seed`` share vocabulary and embeddings, so a
    model trained on one can be applied to another.
    """
    vrng = np.random.default_rng([0 if vocab_seed is None else vocab_seed, 17])
    taken: set[str] = set(FUNCTION_WORDS)
    content = _pseudo_words(vrng, 600, 2, taken)
    entities = [w.capitalize() for w in _pseudo_words(vrng, 200, 3, taken)]
    table = make_table(list(FUNCTION_WORDS) + content + entities + ["."], vrng)
    rng = np.random.default_rng([seed, 29])
    docs = []
    for k in range(n_docs):
        n = int(rng.integers(min_sentences, max_sentences + 1))
        docs.append(generate_document(f"{prefix}{k:03d}", n, rng, content, entities))
    return SyntheticCorpus(docs, table)
