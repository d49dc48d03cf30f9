"""W2VP1 parameter checkpoints.

Layout (little-endian)::

    magic   b"W2VP"
    u32     version (1)
    u32     entry count
    entries name_len:u16, name:utf-8, ndim:u32, dims:u32*ndim, data:f64*prod(dims)

Entries keep their write order. A JSON sidecar (``<file>.json``) carries the
configuration and training position.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FormatError

MAGIC = b"W2VP"
VERSION = 1


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def encode_params(entries: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, arr in entries.items():
        raw = name.encode("utf-8")
        a = np.asarray(arr, dtype="<f8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
        parts.append(a.tobytes(order="C"))
    return b"".join(parts)


def decode_params(buf: bytes, source: str = "<bytes>") -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise FormatError(f"{source}: unsupported checkpoint version {version}")
        pos = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * size > len(buf):
                raise FormatError(f"{source}: truncated data for entry {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(dims).copy()
            pos += 8 * size
    except struct.error as exc:
        raise FormatError(f"{source}: truncated checkpoint") from exc
    if pos != len(buf):
        raise FormatError(f"{source}: {len(buf) - pos} trailing bytes")
    return out


def save_checkpoint(path: str | Path, entries: Mapping[str, np.ndarray], sidecar: dict | None = None) -> Path:
    """Write ``entries`` atomically, plus the optional JSON sidecar."""
    path = Path(path)
    if sidecar is not None:
        _atomic_write(path.with_name(path.name + ".json"), json.dumps(sidecar, indent=1).encode())
    _atomic_write(path, encode_params(entries))
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(entries, sidecar)``; the sidecar is ``{}`` when absent."""
    path = Path(path)
    entries = decode_params(path.read_bytes(), str(path))
    side = path.with_name(path.name + ".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    return entries, meta
