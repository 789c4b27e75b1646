"""PVFW checkpoint files.

Layout (little-endian throughout)::

    b"PVFW" | u32 version | u32 tensor_count
    per tensor: u32 name_len | name (UTF-8) | u32 rank | u64 extent * rank | f32 data
    u64 FNV-1a digest of every preceding byte

Tensor data is copied verbatim as raw words, so corrupted values (NaN payloads,
infinities) round-trip bit-exactly.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"PVFW"
VERSION = 1
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


class CheckpointError(ValueError):
    pass


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


def encode_checkpoint(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            raise CheckpointError(f"tensor {name!r} is {arr.dtype}; only float32 is stored")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).astype("<f4", copy=False).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", fnv1a64(body))


def decode_checkpoint(blob: bytes) -> tuple[dict[str, np.ndarray], int]:
    """Parse a checkpoint; returns (tensors, digest)."""
    if len(blob) < 20 or blob[:4] != MAGIC:
        raise CheckpointError("not a PVFW checkpoint (bad magic)")
    body, (stored,) = blob[:-8], struct.unpack("<Q", blob[-8:])
    digest = fnv1a64(body)
    if digest != stored:
        raise CheckpointError(f"checkpoint digest mismatch: stored {stored:016x}, computed {digest:016x}")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    tensors: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + n].decode("utf-8")
            if len(name.encode("utf-8")) != n:
                raise CheckpointError("truncated tensor name")
            pos += n
            (rank,) = struct.unpack_from("<I", body, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", body, pos)
            pos += 8 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * size > len(body):
                raise CheckpointError(f"tensor {name!r} data truncated")
            if name in tensors:
                raise CheckpointError(f"duplicate tensor name {name!r}")
            data = np.frombuffer(body, dtype="<f4", count=size, offset=pos)
            tensors[name] = data.astype(np.float32).reshape(shape)
            pos += 4 * size
    except (struct.error, UnicodeDecodeError) as e:
        raise CheckpointError(f"truncated checkpoint: {e}") from None
    if pos != len(body):
        raise CheckpointError(f"{len(body) - pos} trailing bytes after last tensor")
    return tensors, digest


def save_checkpoint(path, tensors: Mapping[str, np.ndarray]) -> str:
    """Write `tensors` to `path`; returns the digest as 16 hex digits."""
    blob = encode_checkpoint(tensors)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)
    return blob[-8:][::-1].hex()


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], str]:
    tensors, digest = decode_checkpoint(Path(path).read_bytes())
    return tensors, f"{digest:016x}"


def tensors_digest(tensors: Mapping[str, np.ndarray]) -> str:
    """Digest the checkpoint encoding of in-memory tensors would carry."""
    return f"{fnv1a64(encode_checkpoint(tensors)[:-8]):016x}"
