"""Binary file formats: WMIX checkpoints and WDAT image datasets.

Both formats are little-endian and must round-trip bit-exactly.

WMIX checkpoint::

    magic "WMIX" | u32 version | u32 json_len | config JSON (UTF-8)
    repeated tensor records until EOF:
        u32 name_len | name (UTF-8) | u8 dtype (0=f32, 1=f64) | u8 rank
        u64 dims[rank] | raw row-major data

WDAT dataset::

    magic "WDAT" | u32 count | u16 height | u16 width | u16 channels
    u8 pixels[count*h*w*c] | u16 labels[count]
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "CheckpointError",
    "save_checkpoint",
    "load_checkpoint",
    "save_wdat",
    "load_wdat",
]

_WMIX_MAGIC = b"WMIX"
_WMIX_VERSION = 1
_WDAT_MAGIC = b"WDAT"

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype(np.float32), 1: np.dtype(np.float64)}


class CheckpointError(IOError):
    """Malformed or mismatched checkpoint/dataset file."""


def save_checkpoint(path, config: dict, tensors: dict[str, np.ndarray]) -> None:
    """Write a WMIX file: a JSON config blob plus named tensor records."""
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_WMIX_MAGIC)
        f.write(struct.pack("<I", _WMIX_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr)
            if arr.dtype not in _DTYPE_CODES:
                raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
            enc = name.encode("utf-8")
            f.write(struct.pack("<I", len(enc)))
            f.write(enc)
            f.write(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            if arr.dtype.byteorder == ">":
                arr = arr.byteswap().view(arr.dtype.newbyteorder("<"))
            f.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a WMIX file back into (config dict, ordered name -> array)."""
    raw = Path(path).read_bytes()
    if raw[:4] != _WMIX_MAGIC:
        raise CheckpointError(f"{path}: not a WMIX file")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != _WMIX_VERSION:
        raise CheckpointError(f"{path}: unsupported WMIX version {version}")
    (json_len,) = struct.unpack_from("<I", raw, 8)
    off = 12
    config = json.loads(raw[off:off + json_len].decode("utf-8"))
    off += json_len
    tensors: dict[str, np.ndarray] = {}
    while off < len(raw):
        (name_len,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off:off + name_len].decode("utf-8")
        off += name_len
        code, rank = struct.unpack_from("<BB", raw, off)
        off += 2
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"{path}: bad dtype code {code} for tensor {name!r}")
        dims = struct.unpack_from(f"<{rank}Q", raw, off)
        off += 8 * rank
        dtype = _CODE_DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        arr = np.frombuffer(raw[off:off + nbytes], dtype=dtype.newbyteorder("<")).astype(dtype)
        off += nbytes
        tensors[name] = arr.reshape(dims)
    return config, tensors


def save_wdat(path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write a WDAT dataset: u8 images (N, H, W, C) with u16 labels (N,)."""
    if images.ndim != 4:
        raise CheckpointError(f"images must be (N, H, W, C), got {images.shape}")
    n, h, w, c = images.shape
    if labels.shape != (n,):
        raise CheckpointError(f"labels shape {labels.shape} != ({n},)")
    px = np.ascontiguousarray(images, dtype=np.uint8)
    lb = np.ascontiguousarray(labels, dtype="<u2")
    with open(path, "wb") as f:
        f.write(_WDAT_MAGIC)
        f.write(struct.pack("<IHHH", n, h, w, c))
        f.write(px.tobytes())
        f.write(lb.tobytes())


def load_wdat(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a WDAT dataset into float32 images in [0, 1] and int64 labels."""
    raw = Path(path).read_bytes()
    if raw[:4] != _WDAT_MAGIC:
        raise CheckpointError(f"{path}: not a WDAT file")
    n, h, w, c = struct.unpack_from("<IHHH", raw, 4)
    off = 4 + 10
    npx = n * h * w * c
    px = np.frombuffer(raw[off:off + npx], dtype=np.uint8)
    if px.size != npx:
        raise CheckpointError(f"{path}: truncated pixel block")
    off += npx
    if len(raw) < off + 2 * n:
        raise CheckpointError(f"{path}: truncated label block")
    lb = np.frombuffer(raw[off:off + 2 * n], dtype="<u2")
    images = (px.reshape(n, h, w, c).astype(np.float32)) / 255.0
    return images, lb.astype(np.int64)
