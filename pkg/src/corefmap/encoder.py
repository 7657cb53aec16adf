"""Hierarchical BiLSTM document encoder.

Words of each sentence pass through a BiLSTM whose states are max-pooled into
a sentence vector; a second BiLSTM over the sentence vectors yields ``H``.

The recurrence runs in a fused kernel (:func:`lstm_direction`) with an
explicit backward pass.  :func:`lstm_cell` builds the same cell out of
numcore primitives and serves as its reference.  Both the per-sentence path
and the padded batch path use row-stable contractions, so padding never
changes a single bit of the unpadded result.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numcore as nc
from .corpus import Document, EmbeddingTable, embed_sentence
from .errors import ShapeError
from .numcore import Tensor

HIDDEN_SIZE = 25
INIT_STD = 0.02
FORGET_BIAS = 1.0


def _rowdot(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # Non-BLAS contraction: each output row depends only on its own input row.
    return np.einsum("ri,ij->rj", x, w, optimize=False)


@dataclass
class LstmDirection:
    W_ih: Tensor  # (input, 4*hidden), gate blocks ordered i, f, g, o
    W_hh: Tensor  # (hidden, 4*hidden)
    b: Tensor  # (4*hidden,)

    @property
    def hidden_size(self) -> int:
        return self.W_hh.shape[0]

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: np.random.Generator) -> "LstmDirection":
        b = rng.normal(0.0, INIT_STD, 4 * hidden_size)
        b[hidden_size : 2 * hidden_size] = FORGET_BIAS
        return cls(
            nc.parameter(rng.normal(0.0, INIT_STD, (input_size, 4 * hidden_size))),
            nc.parameter(rng.normal(0.0, INIT_STD, (hidden_size, 4 * hidden_size))),
            nc.parameter(b),
        )

    def named(self) -> dict[str, Tensor]:
        return {"W_ih": self.W_ih, "W_hh": self.W_hh, "b": self.b}


@dataclass
class BiLstmParams:
    input_size: int
    hidden_size: int
    forward: LstmDirection
    backward: LstmDirection

    @classmethod
    def init(cls, input_size: int, hidden_size: int = HIDDEN_SIZE, rng=None) -> "BiLstmParams":
        rng = np.random.default_rng(0) if rng is None else rng
        return cls(
            input_size,
            hidden_size,
            LstmDirection.init(input_size, hidden_size, rng),
            LstmDirection.init(input_size, hidden_size, rng),
        )

    @property
    def output_size(self) -> int:
        return 2 * self.hidden_size

    def named(self) -> dict[str, Tensor]:
        out = {}
        for prefix, d in (("fw", self.forward), ("bw", self.backward)):
            for k, v in d.named().items():
                out[f"{prefix}.{k}"] = v
        return out


# ---------------------------------------------------------------------------
# Fused kernel
# ---------------------------------------------------------------------------


def lstm_direction(
    X: Tensor, lengths: Sequence[int], params: LstmDirection, reverse: bool = False
) -> Tensor:
    """Run one LSTM direction over a padded batch ``X`` of shape ``(B, T, input)``.

    Sequence ``b`` occupies positions ``0..lengths[b]-1``; the reverse
    direction reads it right to left.  Padded output positions are zero.
    """
    x = X.data
    if x.ndim != 3:
        raise ShapeError(f"lstm input must be (batch, time, features), got {x.shape}")
    B, T, n_in = x.shape
    W_ih, W_hh, bias = params.W_ih.data, params.W_hh.data, params.b.data
    if W_ih.shape[0] != n_in:
        raise ShapeError(f"lstm input size {n_in} does not match weights {W_ih.shape}")
    hd = W_hh.shape[0]
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.shape != (B,) or np.any(lengths < 1) or np.any(lengths > T):
        raise ShapeError(f"invalid sequence lengths {lengths.tolist()} for T={T}")

    xproj = (_rowdot(x.reshape(B * T, n_in), W_ih) + bias).reshape(B, T, 4 * hd)
    rows = np.arange(B)
    h = np.zeros((B, hd))
    c = np.zeros((B, hd))
    out = np.zeros((B, T, hd))
    cache = []
    for s in range(T):
        valid = s < lengths
        t_idx = np.where(valid, lengths - 1 - s if reverse else s, 0)
        a = xproj[rows, t_idx] + _rowdot(h, W_hh)
        i = nc._sigmoid_np(a[:, :hd])
        f = nc._sigmoid_np(a[:, hd : 2 * hd])
        g = np.tanh(a[:, 2 * hd : 3 * hd])
        o = nc._sigmoid_np(a[:, 3 * hd :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        cache.append((valid, t_idx, h, c, i, f, g, o, tc))
        vm = valid[:, None]
        h = np.where(vm, h_new, h)
        c = np.where(vm, c_new, c)
        out[rows[valid], t_idx[valid]] = h_new[valid]

    def _bw(dout):
        dxproj = np.zeros((B, T, 4 * hd))
        dW_hh = np.zeros_like(W_hh)
        dh_next = np.zeros((B, hd))
        dc_next = np.zeros((B, hd))
        for s in range(T - 1, -1, -1):
            valid, t_idx, h_prev, c_prev, i, f, g, o, tc = cache[s]
            vm = valid[:, None]
            dh = dh_next + np.where(vm, dout[rows, t_idx], 0.0)
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            da = np.concatenate(
                [
                    dc * g * i * (1.0 - i),
                    dc * c_prev * f * (1.0 - f),
                    dc * i * (1.0 - g * g),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            da = np.where(vm, da, 0.0)
            dW_hh += h_prev.T @ da
            dh_next = np.where(vm, da @ W_hh.T, dh_next)
            dc_next = np.where(vm, dc * f, dc_next)
            dxproj[rows[valid], t_idx[valid]] = da[valid]
        flat = dxproj.reshape(B * T, 4 * hd)
        dX = (flat @ W_ih.T).reshape(B, T, n_in)
        dW_ih = x.reshape(B * T, n_in).T @ flat
        return dX, dW_ih, dW_hh, flat.sum(axis=0)

    return nc.record(out, (X, params.W_ih, params.W_hh, params.b), _bw)


# ---------------------------------------------------------------------------
# Composed reference cell
# ---------------------------------------------------------------------------


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, params: LstmDirection) -> tuple[Tensor, Tensor]:
    """One LSTM step from numcore primitives.  ``x``/``h``/``c`` are ``(1, size)``."""
    hd = params.hidden_size
    a = nc.matmul(x, params.W_ih) + nc.matmul(h, params.W_hh) + params.b
    i = nc.sigmoid(nc.take_cols(a, 0, hd))
    f = nc.sigmoid(nc.take_cols(a, hd, 2 * hd))
    g = nc.tanh(nc.take_cols(a, 2 * hd, 3 * hd))
    o = nc.sigmoid(nc.take_cols(a, 3 * hd, 4 * hd))
    c_new = f * c + i * g
    return o * nc.tanh(c_new), c_new


def run_lstm_reference(inputs: Tensor, params: LstmDirection, reverse: bool = False) -> Tensor:
    L = inputs.shape[0]
    hd = params.hidden_size
    h = nc.Tensor(np.zeros((1, hd)))
    c = nc.Tensor(np.zeros((1, hd)))
    outs: list[Tensor | None] = [None] * L
    order = range(L - 1, -1, -1) if reverse else range(L)
    for t in order:
        h, c = lstm_cell(nc.take_rows(inputs, [t]), h, c, params)
        outs[t] = h
    return nc.concat(outs, axis=0)


# ---------------------------------------------------------------------------
# Public encoder operations
# ---------------------------------------------------------------------------


def run_bilstm(params: BiLstmParams, inputs: Tensor) -> Tensor:
    """``(L, input)`` -> ``(L, 2*hidden)``: forward states then backward states per position."""
    inputs = nc.as_tensor(inputs)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise ShapeError(f"run_bilstm needs a non-empty (L, features) input, got {inputs.shape}")
    if inputs.shape[1] != params.input_size:
        raise ShapeError(f"input size {inputs.shape[1]} != expected {params.input_size}")
    L = inputs.shape[0]
    x3 = nc.reshape(inputs, (1, L, params.input_size))
    fw = lstm_direction(x3, [L], params.forward)
    bw = lstm_direction(x3, [L], params.backward, reverse=True)
    return nc.reshape(nc.concat([fw, bw], axis=2), (L, params.output_size))


def run_bilstm_batch(params: BiLstmParams, X: Tensor, lengths: Sequence[int]) -> Tensor:
    """Padded variant of :func:`run_bilstm`: ``(B, T, input)`` -> ``(B, T, 2*hidden)``."""
    fw = lstm_direction(X, lengths, params.forward)
    bw = lstm_direction(X, lengths, params.backward, reverse=True)
    return nc.concat([fw, bw], axis=2)


def encode_sentence(params: BiLstmParams, vectors: Tensor) -> Tensor:
    """Coordinatewise maximum over the BiLSTM states of one sentence."""
    return nc.max_over_axis(run_bilstm(params, vectors), axis=0)


def masked_max_pool(states: Tensor, lengths: Sequence[int]) -> Tensor:
    """Max over time for each padded sequence; padding counts as ``-inf``."""
    x = states.data
    B, T, D = x.shape
    lengths = np.asarray(lengths)
    pad = np.arange(T)[None, :] >= lengths[:, None]
    masked = np.where(pad[:, :, None], -np.inf, x)
    winners = np.argmax(masked, axis=1)  # (B, D), first maximum
    out = np.take_along_axis(masked, winners[:, None, :], axis=1)[:, 0, :]

    def _bw(g):
        gin = np.zeros_like(x)
        np.put_along_axis(gin, winners[:, None, :], g[:, None, :], axis=1)
        return (gin,)

    return nc.record(out, (states,), _bw)


def encode_embedded(
    sentences: Sequence[Tensor], word_params: BiLstmParams, sent_params: BiLstmParams
) -> Tensor:
    """Sentence-level BiLSTM over max-pooled word states; one row per sentence."""
    pooled = [encode_sentence(word_params, s) for s in sentences]
    S = nc.stack(pooled)
    return run_bilstm(sent_params, S)


def encode_document(
    document: Document,
    table: EmbeddingTable,
    word_params: BiLstmParams,
    sent_params: BiLstmParams,
    batched: bool = False,
) -> Tensor:
    """Return ``H`` (``N x 2*hidden``) for one document."""
    if batched:
        return encode_documents_batched([document], table, word_params, sent_params)[0]
    vectors = [Tensor(embed_sentence(s, table)) for s in document.sentences]
    return encode_embedded(vectors, word_params, sent_params)


def encode_documents_batched(
    documents: Sequence[Document],
    table: EmbeddingTable,
    word_params: BiLstmParams,
    sent_params: BiLstmParams,
) -> list[Tensor]:
    """Encode several documents with two padded passes (words, then sentences).

    Bit-identical to calling :func:`encode_document` on each document.
    """
    sents = [s for d in documents for s in d.sentences]
    lengths = [len(s) for s in sents]
    T = max(lengths)
    X = np.zeros((len(sents), T, table.dimension))
    for k, s in enumerate(sents):
        X[k, : len(s)] = embed_sentence(s, table)
    states = run_bilstm_batch(word_params, Tensor(X), lengths)
    pooled = masked_max_pool(states, lengths)  # (total sentences, 2h)

    counts = [d.n for d in documents]
    N = max(counts)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    index = np.zeros((len(documents), N), dtype=np.int64)
    for b, (off, cnt) in enumerate(zip(offsets, counts)):
        index[b, :cnt] = np.arange(off, off + cnt)
    gathered = nc.take_rows(pooled, index.reshape(-1).tolist())
    padded = nc.reshape(gathered, (len(documents), N, word_params.output_size))
    # padded slots hold copies of a real row; the length mask keeps them out of every result
    H = run_bilstm_batch(sent_params, padded, counts)
    flat = nc.reshape(H, (len(documents) * N, sent_params.output_size))
    return [nc.take_rows(flat, list(range(b * N, b * N + cnt))) for b, cnt in enumerate(counts)]
