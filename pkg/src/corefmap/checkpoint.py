"""Versioned binary container of named float64 tensors.

Layout (all integers little-endian)::

    magic        8 bytes   b"CRFMCKPT"
    version      u32       currently 1
    meta_len     u32       length of the metadata block
    meta         bytes     UTF-8 JSON, keys sorted, no whitespace
    step         u64       optimizer step counter
    count        u32       number of tensors
    count times:
        name_len u16
        name     bytes     UTF-8
        ndim     u8
        dims     ndim x u32
        data     prod(dims) x float64 (IEEE 754, little-endian, C order)

Tensor names use the prefixes ``param/``, ``adam_m/`` and ``adam_v/``.
Writing the same checkpoint twice produces identical bytes.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError

MAGIC = b"CRFMCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    moments: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    config: dict = field(default_factory=dict)
    version: int = VERSION

    def tensors(self) -> dict[str, np.ndarray]:
        out = {f"param/{k}": v for k, v in self.params.items()}
        out.update(self.moments)
        return out

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        meta = json.dumps(self.config, sort_keys=True, separators=(",", ":")).encode("utf-8")
        buf.write(MAGIC)
        buf.write(struct.pack("<II", self.version, len(meta)))
        buf.write(meta)
        tensors = self.tensors()
        buf.write(struct.pack("<QI", self.step, len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f8", order="C")  # keeps 0-d shapes, unlike ascontiguousarray
            raw = name.encode("utf-8")
            buf.write(struct.pack("<H", len(raw)))
            buf.write(raw)
            buf.write(struct.pack("<B", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(arr.tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes, path=None) -> "Checkpoint":
        view = memoryview(blob)
        pos = 0

        def take(n):
            nonlocal pos
            if pos + n > len(view):
                raise ParseError("truncated checkpoint", path)
            out = view[pos : pos + n]
            pos += n
            return out

        if bytes(take(8)) != MAGIC:
            raise ParseError("not a checkpoint file (bad magic)", path)
        version, meta_len = struct.unpack("<II", take(8))
        if version != VERSION:
            raise ParseError(f"unsupported checkpoint version {version}", path)
        config = json.loads(bytes(take(meta_len)).decode("utf-8"))
        step, count = struct.unpack("<QI", take(12))
        params, moments = {}, {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", take(2))
            name = bytes(take(name_len)).decode("utf-8")
            (ndim,) = struct.unpack("<B", take(1))
            dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
            size = int(np.prod(dims)) if ndim else 1
            arr = np.frombuffer(bytes(take(8 * size)), dtype="<f8").reshape(dims).astype(np.float64)
            if name.startswith("param/"):
                params[name[len("param/") :]] = arr
            else:
                moments[name] = arr
        if pos != len(view):
            raise ParseError("trailing bytes after checkpoint", path)
        return cls(params, moments, step, config, version)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), path)
