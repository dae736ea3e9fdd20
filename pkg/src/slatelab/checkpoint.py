"""Versioned binary checkpoints for parameter stores.

Layout (all integers little-endian):

    magic   8 bytes  b"SLCKPT01"
    meta    u32 length + UTF-8 JSON (model/config/RNG header)
    n_stores u32
    per store:
        name     u32 length + UTF-8
        step     u64 optimizer step count
        n_params u32
        per parameter:
            name  u32 length + UTF-8
            ndim  u32, dims u64[ndim]
            value float64[prod(dims)]
            m     float64[prod(dims)]
            v     float64[prod(dims)]

Round-trips are bit-exact: values, Adam moments, step counts and metadata
all survive save/load unchanged.
"""

from __future__ import annotations

import json
import struct
from typing import Dict, Tuple

import numpy as np

from .optim import ParameterStore

MAGIC = b"SLCKPT01"


def _write_str(out, s: str) -> None:
    raw = s.encode("utf-8")
    out.append(struct.pack("<I", len(raw)))
    out.append(raw)


def _write_array(out, a: np.ndarray) -> None:
    out.append(np.ascontiguousarray(a, dtype="<f8").tobytes())


def save_checkpoint(path, stores: Dict[str, ParameterStore], metadata: dict | None = None) -> None:
    out = [MAGIC]
    meta_raw = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    out.append(struct.pack("<I", len(meta_raw)))
    out.append(meta_raw)
    out.append(struct.pack("<I", len(stores)))
    for store_name, store in stores.items():
        _write_str(out, store_name)
        out.append(struct.pack("<Q", store.step_count))
        entries = list(store.items())
        out.append(struct.pack("<I", len(entries)))
        for pname, p in entries:
            _write_str(out, pname)
            out.append(struct.pack("<I", p.value.ndim))
            out.append(struct.pack(f"<{p.value.ndim}Q", *p.value.shape))
            _write_array(out, p.value)
            _write_array(out, p.m)
            _write_array(out, p.v)
    with open(path, "wb") as f:
        f.write(b"".join(out))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ValueError("truncated checkpoint")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def array(self, shape) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        raw = self.take(8 * n)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def load_checkpoint(path) -> Tuple[Dict[str, ParameterStore], dict]:
    with open(path, "rb") as f:
        buf = f.read()
    r = _Reader(buf)
    if r.take(8) != MAGIC:
        raise ValueError(f"not a checkpoint file: {path}")
    metadata = json.loads(r.take(r.u32()).decode("utf-8"))
    stores: Dict[str, ParameterStore] = {}
    for _ in range(r.u32()):
        store_name = r.string()
        store = ParameterStore()
        store.step_count = r.u64()
        for _ in range(r.u32()):
            pname = r.string()
            ndim = r.u32()
            shape = tuple(r.u64() for _ in range(ndim))
            p = store.add(pname, r.array(shape))
            p.m[...] = r.array(shape)
            p.v[...] = r.array(shape)
        stores[store_name] = store
    return stores, metadata
