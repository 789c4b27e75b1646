"""IDX (MNIST) files: big-endian header, unsigned-byte payload, optional gzip."""
from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxError(ValueError):
    pass


def _read_bytes(path) -> bytes:
    path = Path(path)
    data = path.read_bytes()
    if data[:2] == b"\x1f\x8b":
        try:
            data = gzip.decompress(data)
        except (OSError, EOFError) as e:
            raise IdxError(f"{path}: corrupt gzip stream ({e})") from None
    return data


def _parse(data: bytes, magic: int, ndim: int, what: str) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxError(f"{what}: truncated header ({len(data)} bytes)")
    (got,) = struct.unpack(">I", data[:4])
    if got != magic:
        raise IdxError(f"{what}: bad magic 0x{got:08X}, expected 0x{magic:08X}")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    need = int(np.prod(dims, dtype=np.int64))
    if len(data) - header < need:
        raise IdxError(f"{what}: truncated payload, expected {need} bytes, found {len(data) - header}")
    if len(data) - header > need:
        raise IdxError(f"{what}: {len(data) - header - need} unexpected trailing bytes")
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    """uint8 images, shape (n, rows, cols)."""
    return _parse(_read_bytes(path), IMAGE_MAGIC, 3, str(path))


def read_idx_labels(path) -> np.ndarray:
    return _parse(_read_bytes(path), LABEL_MAGIC, 1, str(path))


def read_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Images scaled to [0, 1] as float32 (n, 28, 28) plus int64 labels."""
    raw = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if raw.shape[0] != labels.shape[0]:
        raise IdxError(f"{raw.shape[0]} images but {labels.shape[0]} labels")
    images = raw.astype(np.float32) / np.float32(255.0)
    return images, labels.astype(np.int64)


def encode_idx(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype != np.uint8 or arr.ndim not in (1, 3):
        raise IdxError("only uint8 label vectors or image stacks are written")
    magic = LABEL_MAGIC if arr.ndim == 1 else IMAGE_MAGIC
    return struct.pack(f">I{arr.ndim}I", magic, *arr.shape) + arr.tobytes()


def write_idx(path, arr: np.ndarray, compress: bool | None = None) -> None:
    path = Path(path)
    blob = encode_idx(arr)
    if compress is None:
        compress = path.suffix == ".gz"
    if compress:
        blob = gzip.compress(blob, mtime=0)
    path.write_bytes(blob)
