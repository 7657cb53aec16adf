"""Coreference clusters and the sentence-level coreference graph."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Document
from .errors import ParseError, ValidationError


@dataclass(frozen=True, order=True)
class MentionSpan:
    sentence_idx: int
    token_start: int
    token_end: int  # inclusive

    def validate(self, doc: Document) -> None:
        if not 0 <= self.sentence_idx < doc.n:
            raise ValidationError(f"sentence index {self.sentence_idx} out of range (n={doc.n})")
        length = len(doc.sentences[self.sentence_idx])
        if not 0 <= self.token_start <= self.token_end < length:
            raise ValidationError(
                f"token span [{self.token_start}, {self.token_end}] invalid for "
                f"sentence {self.sentence_idx} of length {length}"
            )

    def to_list(self) -> list[int]:
        return [self.sentence_idx, self.token_start, self.token_end]


@dataclass(frozen=True)
class CorefClusters:
    clusters: tuple[tuple[MentionSpan, ...], ...]

    def __post_init__(self):
        fixed = []
        for ci, cluster in enumerate(self.clusters):
            mentions = tuple(sorted(cluster, key=lambda m: (m.sentence_idx, m.token_start, m.token_end)))
            if len(mentions) < 2:
                raise ValidationError(f"cluster {ci} has fewer than two mentions")
            fixed.append(mentions)
        object.__setattr__(self, "clusters", tuple(fixed))

    def __len__(self) -> int:
        return len(self.clusters)

    def to_json(self) -> list:
        return [[m.to_list() for m in c] for c in self.clusters]

    @classmethod
    def empty(cls) -> "CorefClusters":
        return cls(())


@dataclass(frozen=True)
class CorefGraph:
    """Directed sentence graph; every edge points from an earlier to a later sentence."""

    n: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        edges = frozenset((int(s), int(d)) for s, d in self.edges)
        object.__setattr__(self, "edges", edges)
        for s, d in edges:
            if not (0 <= s < d < self.n):
                raise ValidationError(f"invalid coreference edge ({s}, {d}) for n={self.n}")

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def adjacency(self, symmetric: bool = True) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for s, d in self.edges:
            a[s, d] = 1.0
            if symmetric:
                a[d, s] = 1.0
        return a

    def neighbours(self) -> list[list[int]]:
        nb: list[set[int]] = [set() for _ in range(self.n)]
        for s, d in self.edges:
            nb[s].add(d)
            nb[d].add(s)
        return [sorted(x) for x in nb]

    def permuted(self, perm: Sequence[int]) -> "CorefGraph":
        """Relabel node ``i`` as ``perm[i]``; edge orientation is normalised to low->high."""
        edges = set()
        for s, d in self.edges:
            a, b = perm[s], perm[d]
            edges.add((min(a, b), max(a, b)))
        return CorefGraph(self.n, frozenset(edges))

    def to_json(self, doc_id: str | None = None) -> dict:
        obj = {"n": self.n, "edges": [list(e) for e in self.sorted_edges()]}
        if doc_id is not None:
            obj = {"id": doc_id, **obj}
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "CorefGraph":
        return cls(int(obj["n"]), frozenset(tuple(e) for e in obj["edges"]))


def parse_clusters(raw, doc: Document) -> CorefClusters:
    """Validate a ``[[[sent, start, end], ...], ...]`` structure against ``doc``."""
    if not isinstance(raw, list):
        raise ValidationError(f"{doc.id}: clusters must be a list")
    clusters = []
    for ci, cluster in enumerate(raw):
        if not isinstance(cluster, list):
            raise ValidationError(f"{doc.id}: cluster {ci} must be a list of mentions")
        mentions = []
        for mi, span in enumerate(cluster):
            if not (isinstance(span, (list, tuple)) and len(span) == 3):
                raise ValidationError(f"{doc.id}: cluster {ci} mention {mi} must be [sent, start, end]")
            m = MentionSpan(*(int(v) for v in span))
            try:
                m.validate(doc)
            except ValidationError as exc:
                raise ValidationError(f"{doc.id}: cluster {ci} mention {mi}: {exc}") from None
            mentions.append(m)
        clusters.append(tuple(mentions))
    try:
        return CorefClusters(tuple(clusters))
    except ValidationError as exc:
        raise ValidationError(f"{doc.id}: {exc}") from None


def load_clusters(path, document: Document) -> CorefClusters:
    """Load one document's clusters from a JSON file."""
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", path, exc.lineno) from exc
    return parse_clusters(raw, document)


def load_cluster_file(path, documents: Iterable[Document]) -> dict[str, CorefClusters]:
    """Load clusters for many documents from JSON lines ``{"id": ..., "clusters": [...]}``.

    Documents absent from the file are absent from the result.
    """
    by_id = {d.id: d for d in documents}
    out: dict[str, CorefClusters] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", path, lineno) from exc
            doc_id = str(obj.get("id"))
            if doc_id not in by_id:
                raise ParseError(f"clusters for unknown document {doc_id!r}", path, lineno)
            out[doc_id] = parse_clusters(obj.get("clusters", []), by_id[doc_id])
    return out


def save_cluster_file(clusters: dict[str, CorefClusters], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, cl in clusters.items():
            fh.write(json.dumps({"id": doc_id, "clusters": cl.to_json()}) + "\n")


def build_coref_graph(clusters: CorefClusters, n: int) -> CorefGraph:
    """Link the sentence of each cluster's first mention to every other mention's sentence."""
    edges: set[tuple[int, int]] = set()
    for cluster in clusters.clusters:
        sentence_ids = [m.sentence_idx for m in cluster]
        for s in sentence_ids:
            if not 0 <= s < n:
                raise ValidationError(f"sentence index {s} out of range (n={n})")
        root = sentence_ids[0]
        for other in sentence_ids[1:]:
            if other != root:
                edges.add((root, other))
    return CorefGraph(n, frozenset(edges))


def _capitalised_runs(sentence: Sequence[str]) -> list[tuple[int, int]]:
    runs = []
    start = None
    for i, tok in enumerate(sentence):
        cap = tok[:1].isupper()
        if cap and start is None:
            start = i
        elif not cap and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(sentence) - 1))
    return runs


def heuristic_clusters(document: Document) -> CorefClusters:
    """Cluster repeated maximal runs of capitalised tokens by exact string match.

    Scaffolding for runs without resolver output; not a coreference model.
    """
    groups: dict[tuple[str, ...], list[MentionSpan]] = {}
    for si, sent in enumerate(document.sentences):
        for start, end in _capitalised_runs(sent):
            key = tuple(sent[start : end + 1])
            groups.setdefault(key, []).append(MentionSpan(si, start, end))
    clusters = [tuple(ms) for _, ms in sorted(groups.items(), key=lambda kv: kv[1][0]) if len(ms) >= 2]
    return CorefClusters(tuple(clusters))


def save_graph_file(graphs: dict[str, CorefGraph], path) -> None:
    """JSON lines ``{"id", "n", "edges"}`` with edges sorted."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, g in graphs.items():
            fh.write(json.dumps(g.to_json(doc_id)) + "\n")


def load_graph_file(path, documents: Iterable[Document]) -> dict[str, CorefGraph]:
    """Read graphs written by :func:`save_graph_file`, checking node counts."""
    by_id = {d.id: d for d in documents}
    out: dict[str, CorefGraph] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                doc_id = str(obj["id"])
                graph = CorefGraph.from_json(obj)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", path, lineno) from exc
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"malformed graph record: {exc}", path, lineno) from exc
            if doc_id not in by_id:
                raise ParseError(f"graph for unknown document {doc_id!r}", path, lineno)
            if graph.n != by_id[doc_id].n:
                raise ParseError(
                    f"graph for {doc_id!r} has {graph.n} nodes, document has {by_id[doc_id].n} sentences",
                    path,
                    lineno,
                )
            out[doc_id] = graph
    return out
