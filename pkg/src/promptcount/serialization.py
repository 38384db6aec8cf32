"""Binary tensor archive shared by checkpoints and classifier heads.

Layout (all integers little-endian):

    magic   b"PCTA"
    u8      format version (currently 1)
    u32     metadata length, then that many bytes of canonical JSON
    u32     tensor count
    per tensor:
        u16     name length, then that many bytes of UTF-8 name
        u8      ndim
        u32[ndim] dims
        f32[prod(dims)] payload, C order

Tensors are written in sorted name order and the metadata JSON uses sorted
keys, so write -> read -> write is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from .errors import FormatError

__all__ = [
    "write_archive",
    "read_archive",
    "save_archive",
    "load_archive",
    "canonical_json",
    "config_hash",
]

_MAGIC = b"PCTA"
_VERSION = 1


def canonical_json(obj) -> str:
    """Deterministic JSON text: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    """Short stable identifier for a JSON-serializable configuration."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


def write_archive(meta: dict, tensors: Mapping[str, np.ndarray]) -> bytes:
    meta_bytes = canonical_json(meta).encode("utf-8")
    out = bytearray()
    out += _MAGIC
    out += struct.pack("<B", _VERSION)
    out += struct.pack("<I", len(meta_bytes))
    out += meta_bytes
    out += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        name_bytes = name.encode("utf-8")
        if len(name_bytes) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name[:32]}...")
        out += struct.pack("<H", len(name_bytes))
        out += name_bytes
        out += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            out += struct.pack("<I", d)
        out += arr.tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"truncated while reading {what}: need {n} bytes, "
                f"{len(self.data) - self.pos} left",
                offset=len(self.data),
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def read_archive(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_MAGIC!r}", offset=0)
    version = r.u8("version")
    if version != _VERSION:
        raise FormatError(f"unsupported archive version {version}", offset=4)
    meta_len = r.u32("metadata length")
    meta_start = r.pos
    meta_bytes = r.take(meta_len, "metadata")
    try:
        meta = json.loads(meta_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"metadata is not valid JSON: {exc}", offset=meta_start)
    if not isinstance(meta, dict):
        raise FormatError("metadata must be a JSON object", offset=meta_start)
    n_tensors = r.u32("tensor count")
    tensors: dict[str, np.ndarray] = {}
    for t in range(n_tensors):
        name_len = r.u16(f"tensor {t} name length")
        name_start = r.pos
        try:
            name = r.take(name_len, f"tensor {t} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"tensor {t} name is not UTF-8: {exc}", offset=name_start)
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}", offset=name_start)
        ndim = r.u8(f"tensor {name!r} ndim")
        dims = tuple(r.u32(f"tensor {name!r} dim {d}") for d in range(ndim))
        n_items = 1
        for d in dims:
            n_items *= d
        payload_start = r.pos
        payload = r.take(4 * n_items, f"tensor {name!r} payload")
        arr = np.frombuffer(payload, dtype="<f4", count=n_items).reshape(dims)
        if not np.isfinite(arr).all():
            raise FormatError(
                f"tensor {name!r} contains non-finite values", offset=payload_start
            )
        tensors[name] = arr.copy()
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes", offset=r.pos)
    return meta, tensors


def save_archive(
    path: Union[str, Path], meta: dict, tensors: Mapping[str, np.ndarray]
) -> None:
    Path(path).write_bytes(write_archive(meta, tensors))


def load_archive(path: Union[str, Path]) -> tuple[dict, dict[str, np.ndarray]]:
    return read_archive(Path(path).read_bytes())
