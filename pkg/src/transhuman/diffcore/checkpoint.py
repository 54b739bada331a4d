"""Binary checkpoint container.

Layout (little-endian): magic ``THFC``, u32 format version, then one record
per array until end of file: u32 name length, UTF-8 name, u32 rank,
rank x u64 extents, float64 payload in row-major order.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .nn import ParamStore

MAGIC = b"THFC"
VERSION = 1
_MOMENT_M = "adam.m/"
_MOMENT_V = "adam.v/"
_STEP = "adam.t"


class CheckpointError(ValueError):
    pass


def write_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_arrays(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    if len(buf) < 8:
        raise CheckpointError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    pos = 8
    out: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated at byte {pos} (need {n} more)")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    while pos < len(buf):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        count = int(np.prod(shape, dtype=np.int64))
        out[name] = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    return out


def save_checkpoint(path, store: ParamStore, with_moments: bool = True) -> None:
    arrays = {name: p.data for name, p in store.items()}
    if with_moments:
        arrays.update({_MOMENT_M + k: v for k, v in store.m.items()})
        arrays.update({_MOMENT_V + k: v for k, v in store.v.items()})
        arrays[_STEP] = np.array(float(store.t))
    write_arrays(path, arrays)


def load_checkpoint(path, store: ParamStore) -> ParamStore:
    """Restore values (and moments when present) into an already-built store."""
    arrays = read_arrays(path)
    for name, p in store.items():
        if name not in arrays:
            raise CheckpointError(f"{path}: missing parameter {name!r}")
        if arrays[name].shape != p.shape:
            raise CheckpointError(f"{path}: {name!r} has shape {arrays[name].shape}, expected {p.shape}")
        p.data = arrays[name].copy()
        if _MOMENT_M + name in arrays:
            store.m[name] = arrays[_MOMENT_M + name].copy()
            store.v[name] = arrays[_MOMENT_V + name].copy()
    if _STEP in arrays:
        store.t = int(arrays[_STEP].reshape(-1)[0])
    return store
