"""ROUGE scoring of mind-maps, baseline relation graphs and an inference timer."""

from __future__ import annotations

import csv
import math
import statistics
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .coref import CorefGraph
from .corpus import Document
from .errors import ValidationError
from .mindmap import KSM, SSM, MindMap
from .relgraph import RelationGraph

SEPARATOR = "<sep>"
REPORT_COLUMNS = ("id", "ssm_r1", "ssm_r2", "ssm_rl", "ksm_r1", "ksm_r2", "ksm_rl")


def _f1(overlap: float, n_cand: int, n_ref: int) -> float:
    if overlap == 0 or n_cand == 0 or n_ref == 0:
        return 0.0
    p = overlap / n_cand
    r = overlap / n_ref
    return 2.0 * p * r / (p + r)


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int = 1) -> float:
    """Clipped n-gram overlap F1."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    cand, ref = ngrams(candidate, n), ngrams(reference, n)
    overlap = sum(min(c, ref[g]) for g, c in cand.items())
    return _f1(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """Longest-common-subsequence F1."""
    return _f1(lcs_length(candidate, reference), len(candidate), len(reference))


@dataclass(frozen=True)
class RougeScore:
    r1: float
    r2: float
    rl: float

    def __post_init__(self):
        for name in ("r1", "r2", "rl"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name}={v} outside [0, 1]")

    @property
    def average(self) -> float:
        return (self.r1 + self.r2 + self.rl) / 3.0

    @classmethod
    def mean(cls, scores: Sequence["RougeScore"]) -> "RougeScore":
        if not scores:
            return cls(0.0, 0.0, 0.0)
        return cls(
            float(np.mean([s.r1 for s in scores])),
            float(np.mean([s.r2 for s in scores])),
            float(np.mean([s.rl for s in scores])),
        )


def score_tokens(candidate: Sequence[str], reference: Sequence[str]) -> RougeScore:
    return RougeScore(rouge_n(candidate, reference, 1), rouge_n(candidate, reference, 2), rouge_l(candidate, reference))


def score_mindmap(predicted: MindMap, gold: MindMap) -> RougeScore:
    """ROUGE between the pre-order linearisations of two maps of the same document."""
    if predicted.doc_id != gold.doc_id:
        raise ValidationError(f"document id mismatch: {predicted.doc_id!r} vs {gold.doc_id!r}")
    if predicted.kind != gold.kind:
        raise ValidationError(f"cannot score a {predicted.kind} map against a {gold.kind} map")
    return score_tokens(predicted.linearize(SEPARATOR), gold.linearize(SEPARATOR))


# ---- baselines ----------------------------------------------------------


def random_graph(n: int, seed: int = 0, doc_id: str | None = None) -> RelationGraph:
    """I.i.d. uniform scores in the open interval (0, 1)."""
    if n < 1:
        raise ValidationError(f"n must be at least 1, got {n}")
    u = np.random.default_rng(seed).random((n, n))
    u[u == 0.0] = np.nextafter(0.0, 1.0)
    return RelationGraph(n, u, doc_id)


def tfidf_vectors(sentences: Sequence[Sequence[str]]) -> np.ndarray:
    """Rows are sentences; ``tf * log(S / df)`` with each sentence counted as a document."""
    lowered = [[t.lower() for t in s] for s in sentences]
    vocab = sorted({t for s in lowered for t in s})
    index = {w: k for k, w in enumerate(vocab)}
    tf = np.zeros((len(lowered), len(vocab)))
    for i, s in enumerate(lowered):
        for t in s:
            tf[i, index[t]] += 1.0
    df = (tf > 0).sum(axis=0)
    return tf * np.log(len(lowered) / df)


def lexrank_graph(document: Document) -> RelationGraph:
    """Cosine similarity of sentence TF-IDF vectors, clamped to [0, 1], unit diagonal.

    A sentence whose vector is all zeros (every term occurs in every
    sentence) has similarity 0 to the others.
    """
    V = tfidf_vectors(document.sentences)
    norms = np.sqrt((V * V).sum(axis=1))
    safe = np.where(norms > 0, norms, 1.0)
    U = V / safe[:, None]
    S = U @ U.T
    S = 0.5 * (S + S.T)  # exact symmetry regardless of summation order
    S = np.clip(S, 0.0, 1.0)
    np.fill_diagonal(S, 1.0)
    return RelationGraph(document.n, S, document.id)


# ---- corpus scoring -----------------------------------------------------


@dataclass
class DocumentScores:
    id: str
    ssm: RougeScore | None = None
    ksm: RougeScore | None = None


def score_corpus(
    predicted: dict[str, MindMap],
    gold: dict[str, MindMap],
    jobs: int = 1,
) -> list[DocumentScores]:
    """Score every gold map against the prediction with the same id.

    Both mappings hold maps of a single kind; score SSM and KSM separately
    and combine them with :func:`merge_kinds`.  Rows come back sorted by id.
    """
    missing = sorted(set(gold) - set(predicted))
    if missing:
        raise ValidationError(f"no prediction for document(s): {', '.join(missing[:5])}")
    ids = sorted(gold)

    def one(doc_id: str) -> RougeScore:
        return score_mindmap(predicted[doc_id], gold[doc_id])

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(one, ids))
    else:
        scores = [one(i) for i in ids]
    out = []
    for doc_id, s in zip(ids, scores):
        kind = gold[doc_id].kind
        out.append(DocumentScores(doc_id, **{kind: s}))
    return out


def merge_kinds(*groups: Sequence[DocumentScores]) -> list[DocumentScores]:
    merged: dict[str, DocumentScores] = {}
    for group in groups:
        for row in group:
            slot = merged.setdefault(row.id, DocumentScores(row.id))
            if row.ssm is not None:
                slot.ssm = row.ssm
            if row.ksm is not None:
                slot.ksm = row.ksm
    return [merged[k] for k in sorted(merged)]


def average_row(rows: Sequence[DocumentScores]) -> DocumentScores:
    ssm = [r.ssm for r in rows if r.ssm is not None]
    ksm = [r.ksm for r in rows if r.ksm is not None]
    return DocumentScores(
        "average",
        RougeScore.mean(ssm) if ssm else None,
        RougeScore.mean(ksm) if ksm else None,
    )


def write_report(rows: Sequence[DocumentScores], path) -> None:
    """CSV with one row per document plus a final ``average`` row (scores in [0, 1])."""

    def cells(s: RougeScore | None) -> list[str]:
        return ["", "", ""] if s is None else [f"{v:.6f}" for v in (s.r1, s.r2, s.rl)]

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in list(rows) + [average_row(rows)]:
            writer.writerow([row.id] + cells(row.ssm) + cells(row.ksm))


# ---- timing -------------------------------------------------------------


def time_phase1(
    predict: Callable[[Document, CorefGraph], RelationGraph],
    documents: Sequence[Document],
    graphs: Sequence[CorefGraph],
    repetitions: int = 3,
    clock: Callable[[], float] = time.perf_counter,
) -> float:
    """Median wall-clock seconds to turn the whole corpus into relation graphs."""
    if repetitions < 1:
        raise ValidationError(f"repetitions must be at least 1, got {repetitions}")
    if not documents:
        return 0.0
    if len(documents) != len(graphs):
        raise ValidationError(f"{len(documents)} documents but {len(graphs)} graphs")
    runs = []
    for _ in range(repetitions):
        t0 = clock()
        for doc, graph in zip(documents, graphs):
            predict(doc, graph)
        runs.append(clock() - t0)
    return float(statistics.median(runs))


def mean_average(rows: Sequence[DocumentScores], kind: str = SSM) -> float:
    """Mean over documents of ``(R-1 + R-2 + R-L) / 3`` for one map kind."""
    vals = [getattr(r, kind).average for r in rows if getattr(r, kind) is not None]
    return float(np.mean(vals)) if vals else math.nan


__all__ = [
    "KSM",
    "SSM",
    "RougeScore",
    "DocumentScores",
    "rouge_n",
    "rouge_l",
    "lcs_length",
    "score_mindmap",
    "score_corpus",
    "merge_kinds",
    "average_row",
    "write_report",
    "random_graph",
    "lexrank_graph",
    "tfidf_vectors",
    "time_phase1",
    "mean_average",
]
