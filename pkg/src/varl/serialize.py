"""Flat little-endian container for named arrays (magic ``VARL``).

Layout, version 1 (pure float64 payloads, used for checkpoints):

    magic "VARL" | version u32 | count u32 |
    per array: name_len u32 | name utf-8 | rank u32 | dims u32... | f64 data

Version 2 inserts a dtype code (u32) between the name and the rank so the
same container can carry u8 image payloads and i64 labels for dataset
caches.  The writer picks version 1 whenever every array is float64, so
checkpoint bytes match the version-1 layout exactly.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .autodiff import Tensor

MAGIC = b"VARL"

_DTYPE_CODES = {0: np.dtype("<f8"), 1: np.dtype("u1"), 2: np.dtype("<i8")}
_CODE_FOR = {np.dtype("<f8"): 0, np.dtype("u1"): 1, np.dtype("<i8"): 2}


class ContainerError(ValueError):
    """Malformed or truncated VARL container."""


def save_arrays(path: str | Path, arrays: Mapping[str, np.ndarray]) -> None:
    """Write named arrays; names are stored in sorted order for determinism."""
    items = []
    all_f64 = True
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])  # tobytes() below emits C order regardless of layout
        if arr.dtype == np.float64:
            arr = arr.astype("<f8", copy=False)
        elif arr.dtype == np.uint8:
            all_f64 = False
        elif np.issubdtype(arr.dtype, np.integer):
            arr = arr.astype("<i8")
            all_f64 = False
        else:
            arr = arr.astype("<f8")
        items.append((name, arr))
    version = 1 if all_f64 else 2

    chunks = [MAGIC, struct.pack("<II", version, len(items))]
    for name, arr in items:
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        if version == 2:
            chunks.append(struct.pack("<I", _CODE_FOR[arr.dtype]))
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ContainerError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    offset = 4

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise ContainerError(f"{path}: truncated at byte {offset} (needed {n} more)")
        piece = blob[offset : offset + n]
        offset += n
        return piece

    version, count = struct.unpack("<II", take(8))
    if version not in (1, 2):
        raise ContainerError(f"{path}: unsupported container version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        dtype = _DTYPE_CODES[0]
        if version == 2:
            (code,) = struct.unpack("<I", take(4))
            if code not in _DTYPE_CODES:
                raise ContainerError(f"{path}: unknown dtype code {code} for {name!r}")
            dtype = _DTYPE_CODES[code]
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n_bytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        data = np.frombuffer(take(n_bytes), dtype=dtype).reshape(dims).copy()
        out[name] = data
    return out


def save_params(path: str | Path, params: Mapping[str, Tensor]) -> None:
    save_arrays(path, {name: t.data for name, t in params.items()})


def load_params(path: str | Path, trainable: bool = True) -> dict[str, Tensor]:
    return {
        name: Tensor(arr, requires_grad=trainable) for name, arr in load_arrays(path).items()
    }
