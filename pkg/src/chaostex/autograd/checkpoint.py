"""CTEX1 checkpoint container.

Layout (all integers little-endian)::

    b"CTEX1"
    u32   record count
    per record:
        u32   name length, then UTF-8 name
        u8    dtype code (0 float32, 1 float64, 2 int64, 3 uint8)
        u8    rank
        u32   dims[rank]
        raw little-endian values, row-major

Metadata strings are stored as rank-1 uint8 records whose name starts with
``meta:``.  Records are written in sorted name order so identical contents
give identical bytes.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"CTEX1"
META_PREFIX = "meta:"
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<i8"): 2, np.dtype("u1"): 3}
_DTYPES = {v: k for k, v in _CODES.items()}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict, metadata: dict[str, str] | None = None) -> None:
    records: dict[str, np.ndarray] = {}
    for name, value in arrays.items():
        if name.startswith(META_PREFIX):
            raise CheckpointError(f"parameter name {name!r} uses the reserved prefix")
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        records[name] = np.asarray(arr, dtype=arr.dtype.newbyteorder("<"), order="C")  # keeps rank 0
    for key, text in (metadata or {}).items():
        records[META_PREFIX + key] = np.frombuffer(str(text).encode("utf-8"), dtype=np.uint8)
    chunks = [MAGIC, struct.pack("<I", len(records))]
    for name in sorted(records):
        arr = records[name]
        if arr.dtype not in _CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Return ``(arrays, metadata)`` from a CTEX1 file."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not buf.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a CTEX1 checkpoint")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    (count,) = take("<I")
    arrays: dict[str, np.ndarray] = {}
    metadata: dict[str, str] = {}
    for _ in range(count):
        (nlen,) = take("<I")
        name = bytes(take(f"<{nlen}s")[0]).decode("utf-8")
        code, rank = take("<BB")
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype code {code}")
        dims = take(f"<{rank}I")
        dtype = _DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        if pos + nbytes > len(buf):
            raise CheckpointError(f"{path}: truncated checkpoint")
        arr = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos)
        pos += nbytes
        arr = arr.reshape(dims).astype(dtype.newbyteorder("="))
        if name.startswith(META_PREFIX):
            metadata[name[len(META_PREFIX):]] = arr.tobytes().decode("utf-8")
        else:
            arrays[name] = arr
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return arrays, metadata
