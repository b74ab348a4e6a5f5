"""Flat binary parameter store plus line-delimited sidecar metadata.

Layout (all integers little-endian):
    magic "EEGSCRIB" | u32 version | u32 tensor count
    per tensor: u32 name length | name utf-8 | u32 rank | u32 dims... | f64 payload

The same container persists model parameters and preprocessed epoch arrays.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import EegScribeError

MAGIC = b"EEGSCRIB"
VERSION = 1


class CheckpointError(EegScribeError):
    pass


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(arrays)))
        for name, arr in arrays.items():
            a = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", a.ndim))
            f.write(struct.pack(f"<{a.ndim}I", *a.shape))
            f.write(a.astype("<f8").tobytes())


def load_arrays(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a parameter checkpoint (bad magic)")
    off = len(MAGIC)
    version, count = struct.unpack_from("<II", data, off)
    off += 8
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(dims)
        off += 8 * n
        out[name] = np.ascontiguousarray(arr)
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes after last tensor")
    return out


def hash_arrays(arrays: dict[str, np.ndarray]) -> str:
    """Order-sensitive byte hash used by the freezing-contract checks."""
    h = hashlib.sha256()
    for name, arr in arrays.items():
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(np.asarray(arr, dtype=np.float64)).astype("<f8").tobytes())
    return h.hexdigest()


def write_metadata(path, meta: dict) -> None:
    """Sidecar metadata: one `key: value` line per entry, lists comma-joined."""
    lines = []
    for key, value in meta.items():
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}: {value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_metadata(path) -> dict[str, str]:
    meta = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(":")
        meta[key.strip()] = value.strip()
    return meta
