"""Document ingestion, word embeddings and token lookup."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, ValidationError

MAX_TRAIN_SENTENCES = 50
MAX_TRAIN_TOKENS = 50
EMBEDDING_DIM = 50


@dataclass(frozen=True)
class Document:
    id: str
    sentences: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        sentences = tuple(tuple(s) for s in self.sentences)
        object.__setattr__(self, "sentences", sentences)
        if not sentences:
            raise ValidationError(f"document {self.id!r} has no sentences")
        for i, sent in enumerate(sentences):
            if not sent:
                raise ValidationError(f"document {self.id!r}: sentence {i} is empty")

    @property
    def n(self) -> int:
        return len(self.sentences)

    def sentence_text(self, i: int) -> str:
        return detokenize(self.sentences[i])

    def check_trainable(self) -> None:
        """Raise unless the document fits the training length limits."""
        if self.n > MAX_TRAIN_SENTENCES:
            raise ValidationError(
                f"document {self.id!r} has {self.n} sentences (limit {MAX_TRAIN_SENTENCES})"
            )
        for i, sent in enumerate(self.sentences):
            if len(sent) > MAX_TRAIN_TOKENS:
                raise ValidationError(
                    f"document {self.id!r}: sentence {i} has {len(sent)} tokens "
                    f"(limit {MAX_TRAIN_TOKENS})"
                )

    def to_json(self) -> dict:
        return {"id": self.id, "sentences": [list(s) for s in self.sentences]}


def load_documents(path) -> list[Document]:
    """Read a JSON-lines file of ``{"id": ..., "sentences": [[token, ...], ...]}``."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", path, lineno) from exc
            if not isinstance(obj, dict) or "id" not in obj or "sentences" not in obj:
                raise ParseError("expected an object with 'id' and 'sentences'", path, lineno)
            sents = obj["sentences"]
            if not isinstance(sents, list) or not all(
                isinstance(s, list) and all(isinstance(w, str) for w in s) for s in sents
            ):
                raise ParseError("'sentences' must be a list of token lists", path, lineno)
            docs.append(Document(str(obj["id"]), sents))
    return docs


def save_documents(docs: Iterable[Document], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc.to_json()) + "\n")


@dataclass
class EmbeddingTable:
    """Token to vector map; lookups never fail (unknown tokens map to zeros)."""

    dimension: int = EMBEDDING_DIM
    vectors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for tok, vec in self.vectors.items():
            if vec.shape != (self.dimension,):
                raise ValidationError(f"vector for {tok!r} has shape {vec.shape}")
        self.oov_vector = np.zeros(self.dimension)

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def lookup(self, token: str) -> np.ndarray:
        vec = self.vectors.get(token.lower())
        if vec is None:
            vec = self.vectors.get(token)
        return self.oov_vector if vec is None else vec

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok, vec in self.vectors.items():
                fh.write(tok + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def load_embeddings(path, dimension: int = EMBEDDING_DIM) -> EmbeddingTable:
    """Parse GloVe-style text: a token followed by ``dimension`` floats per line."""
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if not parts or parts == [""]:
                continue
            token, values = parts[0], [p for p in parts[1:] if p]
            if len(values) != dimension:
                raise ParseError(
                    f"expected {dimension} floats after {token!r}, got {len(values)}",
                    path,
                    lineno,
                )
            try:
                vectors[token] = np.array([float(v) for v in values])
            except ValueError as exc:
                raise ParseError(f"bad float in entry for {token!r}", path, lineno) from exc
    return EmbeddingTable(dimension, vectors)


def embed_sentence(sentence: Sequence[str], table: EmbeddingTable) -> np.ndarray:
    """Stack one embedding row per token (``L x dimension``)."""
    if not sentence:
        raise ValidationError("cannot embed an empty sentence")
    return np.stack([table.lookup(tok) for tok in sentence])


_TOKEN_RE = re.compile(r"\w+(?:['\-]\w+)*|[^\w\s]")
_SENT_RE = re.compile(r"(?<=[.!?])\s+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split off punctuation.  Convenience only."""
    return _TOKEN_RE.findall(text.lower())


def split_sentences(text: str) -> list[list[str]]:
    return [toks for toks in (tokenize(s) for s in _SENT_RE.split(text.strip())) if toks]


_NO_SPACE_BEFORE = {".", ",", "!", "?", ";", ":", ")", "'s", "n't", "%"}


def detokenize(tokens: Sequence[str]) -> str:
    out = ""
    for tok in tokens:
        if not out:
            out = tok
        elif tok in _NO_SPACE_BEFORE or out.endswith("("):
            out += tok
        else:
            out += " " + tok
    return out
