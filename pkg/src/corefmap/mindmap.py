"""Turn a relation graph into a rooted mind-map tree and render it.

Pruning picks, for every sentence after the first, the earlier sentence
that governs it most strongly.  Sentence 0 is always the root.  The result
can be thinned by salience, labelled with whole sentences (SSM) or with a
few keywords (KSM), and exported as DOT or JSON.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import Document, detokenize, tokenize
from .errors import ConfigurationError, ParseError, ValidationError
from .relgraph import RelationGraph

SSM = "ssm"
KSM = "ksm"
KSM_K = 3

STOPWORDS = frozenset(
    """a about above after again against all am an and any are as at be because been before being
    below between both but by can could did do does doing down during each few for from further had
    has have having he her here hers herself him himself his how i if in into is it its itself just
    me more most my myself no nor not now of off on once only or other our ours ourselves out over
    own same she should so some such than that the their theirs them themselves then there these
    they this those through to too under until up very was we were what when where which while who
    whom why will with would you your yours yourself yourselves said says also""".split()
)


def _is_content(token: str) -> bool:
    return token.lower() not in STOPWORDS and any(ch.isalnum() for ch in token)


@dataclass
class Tree:
    """Skeleton of a mind-map: a root, parent links and the retained nodes."""

    n: int
    root: int
    parent: dict[int, int]
    kept: frozenset[int]

    def children(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {k: [] for k in sorted(self.kept)}
        for c, p in sorted(self.parent.items()):
            out[p].append(c)
        return out

    def ancestors(self, node: int) -> list[int]:
        chain = []
        while node in self.parent:
            node = self.parent[node]
            chain.append(node)
        return chain

    def preorder(self) -> list[int]:
        kids = self.children()
        order, stack = [], [self.root]
        while stack:
            node = stack.pop()
            order.append(node)
            stack.extend(reversed(kids[node]))
        return order

    def validate(self) -> None:
        """Raise :class:`ValidationError` unless this is a single-rooted tree over ``kept``."""
        if self.root not in self.kept:
            raise ValidationError(f"root {self.root} is not a kept node")
        if self.root in self.parent:
            raise ValidationError("the root must not have a parent")
        for c, p in self.parent.items():
            if c not in self.kept or p not in self.kept:
                raise ValidationError(f"edge {p}->{c} touches a node that is not kept")
        if set(self.parent) != set(self.kept) - {self.root}:
            raise ValidationError("every kept non-root node needs exactly one parent")
        if len(self.preorder()) != len(self.kept):
            raise ValidationError("parent links contain a cycle or unreachable nodes")


def prune(G: RelationGraph | np.ndarray) -> Tree:
    """Root at sentence 0; each later sentence hangs off its strongest earlier governor.

    Ties go to the lowest index, so a constant matrix yields a star.
    """
    scores = G.scores if isinstance(G, RelationGraph) else np.asarray(G, dtype=np.float64)
    n = scores.shape[0]
    if n < 1 or scores.shape != (n, n):
        raise ValidationError(f"cannot prune a score matrix of shape {scores.shape}")
    # np.argmax returns the first maximal index, which is the tie rule we want
    parent = {j: int(np.argmax(scores[:j, j])) for j in range(1, n)}
    return Tree(n, 0, parent, frozenset(range(n)))


def filter_salient(tree: Tree, G: RelationGraph | np.ndarray, keep_ratio: float = 1.0) -> Tree:
    """Keep the root and the best-scoring ``ceil(keep_ratio * (n-1))`` other nodes.

    A node's salience is the score on its incoming edge.  Children of a dropped
    node move up to their nearest kept ancestor.  Equal scores favour the
    earlier sentence.
    """
    if not 0.0 < keep_ratio <= 1.0:
        raise ConfigurationError(f"keep_ratio must be in (0, 1], got {keep_ratio}")
    scores = G.scores if isinstance(G, RelationGraph) else np.asarray(G, dtype=np.float64)
    candidates = sorted(tree.parent)
    budget = math.ceil(keep_ratio * len(candidates) - 1e-12)
    ranked = sorted(candidates, key=lambda j: (-scores[tree.parent[j], j], j))
    kept = {tree.root} | set(ranked[:budget])
    parent = {}
    for j in sorted(kept - {tree.root}):
        p = tree.parent[j]
        while p not in kept:
            p = tree.parent[p]
        parent[j] = p
    return Tree(tree.n, tree.root, parent, frozenset(kept))


@dataclass
class MindMap:
    doc_id: str | None
    kind: str
    root: int
    parent: dict[int, int]
    node_label: dict[int, str]
    kept: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.kind not in (SSM, KSM):
            raise ConfigurationError(f"unknown mind-map kind {self.kind!r}")
        self.parent = {int(k): int(v) for k, v in self.parent.items()}
        self.node_label = {int(k): str(v) for k, v in self.node_label.items()}
        self.kept = frozenset(int(k) for k in (self.kept or self.node_label))
        if set(self.node_label) != set(self.kept):
            raise ValidationError("node labels must cover exactly the kept nodes")
        self.tree.validate()

    @property
    def tree(self) -> Tree:
        n = max(self.kept) + 1 if self.kept else 0
        return Tree(n, self.root, self.parent, self.kept)

    def linearize(self, separator: str = "<sep>") -> list[str]:
        """Token stream of the labels in pre-order (children by ascending index)."""
        out: list[str] = []
        for k, node in enumerate(self.tree.preorder()):
            if k:
                out.append(separator)
            out.extend(tokenize(self.node_label[node]))
        return out

    def to_json(self) -> dict:
        obj = {
            "kind": self.kind,
            "root": self.root,
            "kept": sorted(self.kept),
            "parent": {str(k): v for k, v in sorted(self.parent.items())},
            "node_label": {str(k): self.node_label[k] for k in sorted(self.node_label)},
        }
        if self.doc_id is not None:
            obj = {"id": self.doc_id, **obj}
        return obj

    @classmethod
    def from_json(cls, obj: dict, path=None) -> "MindMap":
        try:
            return cls(
                obj.get("id"),
                obj.get("kind", SSM),
                int(obj["root"]),
                {int(k): int(v) for k, v in obj["parent"].items()},
                {int(k): v for k, v in obj["node_label"].items()},
                frozenset(int(k) for k in obj.get("kept", obj["node_label"].keys())),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ParseError(f"malformed mind-map: {exc}", path) from exc


def render_ssm(tree: Tree, document: Document) -> MindMap:
    """Label every kept node with its full sentence."""
    if tree.n != document.n:
        raise ValidationError(f"tree has {tree.n} nodes but document {document.id} has {document.n} sentences")
    labels = {j: detokenize(document.sentences[j]) for j in sorted(tree.kept)}
    return MindMap(document.id, SSM, tree.root, dict(tree.parent), labels, tree.kept)


class KeywordScorer:
    """Corpus-level TF-IDF with sentences as the counting unit.

    ``idf(w) = log(S / df(w))`` where ``S`` is the number of sentences seen
    and ``df(w)`` how many of them contain ``w`` (case-insensitive).
    """

    def __init__(self, documents: Iterable[Document] = ()):
        self.df: Counter[str] = Counter()
        self.sentences = 0
        for doc in documents:
            self.add(doc)

    def add(self, document: Document) -> None:
        for sent in document.sentences:
            self.df.update({t.lower() for t in sent})
            self.sentences += 1

    def idf(self, token: str) -> float:
        df = self.df.get(token.lower(), 0)
        if df == 0 or self.sentences == 0:
            # unseen words are as rare as anything can be
            return math.log(self.sentences + 1.0)
        return math.log(self.sentences / df)

    def keywords(self, sentence: Sequence[str], k: int = KSM_K) -> list[str]:
        """Top ``k`` distinct content tokens by TF-IDF, in their original order."""
        if k < 1:
            raise ConfigurationError(f"k must be at least 1, got {k}")
        if not sentence:
            return []
        tf = Counter(t.lower() for t in sentence)
        first_pos: dict[str, int] = {}
        for pos, tok in enumerate(sentence):
            low = tok.lower()
            if _is_content(tok) and low not in first_pos:
                first_pos[low] = pos
        if not first_pos:
            return [sentence[0]]
        ranked = sorted(first_pos, key=lambda w: (-tf[w] * self.idf(w), first_pos[w]))
        chosen = sorted(ranked[:k], key=first_pos.__getitem__)
        return [sentence[first_pos[w]] for w in chosen]


def render_ksm(tree: Tree, document: Document, k: int = KSM_K, scorer: KeywordScorer | None = None) -> MindMap:
    """Label every kept node with its ``k`` best keywords.

    Without a ``scorer`` the document alone serves as the corpus.
    """
    if tree.n != document.n:
        raise ValidationError(f"tree has {tree.n} nodes but document {document.id} has {document.n} sentences")
    scorer = scorer or KeywordScorer([document])
    labels = {j: " ".join(scorer.keywords(document.sentences[j], k)) for j in sorted(tree.kept)}
    return MindMap(document.id, KSM, tree.root, dict(tree.parent), labels, tree.kept)


def build_mindmap(
    G: RelationGraph,
    document: Document,
    kind: str = SSM,
    keep_ratio: float = 1.0,
    k: int = KSM_K,
    scorer: KeywordScorer | None = None,
) -> MindMap:
    tree = filter_salient(prune(G), G, keep_ratio)
    if kind == SSM:
        return render_ssm(tree, document)
    if kind == KSM:
        return render_ksm(tree, document, k, scorer)
    raise ConfigurationError(f"unknown mind-map kind {kind!r}")


def _dot_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")


def to_dot(mm: MindMap) -> str:
    name = _dot_escape(mm.doc_id or "mindmap")
    lines = [f'digraph "{name}" {{', "  node [shape=box];"]
    for j in sorted(mm.kept):
        lines.append(f'  n{j} [label="{_dot_escape(mm.node_label[j])}"];')
    for c, p in sorted(mm.parent.items()):
        lines.append(f"  n{p} -> n{c};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export(mm: MindMap, fmt: str = "json") -> str:
    if fmt == "dot":
        return to_dot(mm)
    if fmt == "json":
        return json.dumps(mm.to_json(), ensure_ascii=False, sort_keys=False)
    raise ConfigurationError(f"unknown export format {fmt!r}")


def load_mindmaps(path) -> list[MindMap]:
    """Read a JSON-lines file of mind-maps; an id may appear once per kind."""
    out: list[MindMap] = []
    seen: set[tuple[str, str]] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", path, lineno) from exc
            if not isinstance(obj, dict) or "id" not in obj:
                raise ParseError("mind-map record needs an 'id'", path, lineno)
            try:
                mm = MindMap.from_json(obj)
            except (ParseError, ValidationError, ConfigurationError) as exc:
                raise ParseError(str(exc), path, lineno) from exc
            key = (mm.kind, str(mm.doc_id))
            if key in seen:
                raise ParseError(f"duplicate {mm.kind} mind-map for id {mm.doc_id!r}", path, lineno)
            seen.add(key)
            out.append(mm)
    return out


def by_kind(maps: Iterable[MindMap]) -> dict[str, dict[str, MindMap]]:
    """Group maps as ``{kind: {doc_id: map}}``."""
    out: dict[str, dict[str, MindMap]] = {}
    for mm in maps:
        out.setdefault(mm.kind, {})[str(mm.doc_id)] = mm
    return out


def save_mindmaps(maps: Iterable[MindMap], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for mm in maps:
            fh.write(export(mm, "json") + "\n")


def gold_from_parents(
    document: Document,
    parents: Sequence[int | None],
    kind: str = SSM,
    k: int = KSM_K,
    scorer: KeywordScorer | None = None,
) -> MindMap:
    """Gold mind-map from a known parent list (``None`` marks the root)."""
    parent = {j: int(p) for j, p in enumerate(parents) if p is not None}
    roots = [j for j, p in enumerate(parents) if p is None]
    if len(roots) != 1:
        raise ValidationError(f"expected exactly one root, found {len(roots)}")
    tree = Tree(document.n, roots[0], parent, frozenset(range(document.n)))
    tree.validate()
    return render_ssm(tree, document) if kind == SSM else render_ksm(tree, document, k, scorer)
