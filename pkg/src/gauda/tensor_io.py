"""Binary tensor container used for checkpoints and dataset dumps.

Layout: magic b"GAUD", format version (u32 LE), ndim (u32 LE), one u64 LE
per shape entry, then the payload as little-endian float64, row-major.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GAUD"
FORMAT_VERSION = 1


class ContainerError(IOError):
    """Malformed or truncated tensor container."""


def save_tensor(path, arr: np.ndarray) -> None:
    # asarray, not ascontiguousarray: the latter promotes 0-d to (1,)
    arr = np.asarray(arr, dtype=np.float64, order="C")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.astype("<f8").tobytes(order="C"))


def load_tensor(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise ContainerError(f"{path}: bad magic {raw[:4]!r}")
    version, ndim = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise ContainerError(f"{path}: unsupported format version {version}")
    shape = struct.unpack_from(f"<{ndim}Q", raw, 12)
    offset = 12 + 8 * ndim
    count = int(np.prod(shape)) if ndim else 1
    expected = offset + 8 * count
    if len(raw) != expected:
        raise ContainerError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
    return data.reshape(shape).astype(np.float64)


def save_tensor_dict(directory, tensors: dict[str, np.ndarray], manifest: dict | None = None) -> None:
    """Write one .gaud file per tensor plus a manifest.json naming them."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entry = dict(manifest or {})
    entry["tensors"] = sorted(tensors)
    for name, arr in tensors.items():
        save_tensor(directory / f"{name}.gaud", arr)
    with (directory / "manifest.json").open("w") as fh:
        json.dump(entry, fh, indent=2, sort_keys=True)


def load_tensor_dict(directory) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    with (directory / "manifest.json").open() as fh:
        manifest = json.load(fh)
    tensors = {name: load_tensor(directory / f"{name}.gaud") for name in manifest["tensors"]}
    return tensors, manifest
