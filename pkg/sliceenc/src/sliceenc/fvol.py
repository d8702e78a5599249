"""Minimal FVOL reader/writer.

Implements the registration engine's public container format so the
adapter interoperates through file bytes alone:

    bytes 0-3    ASCII "FVL1"
    bytes 4-7    u32 little-endian header length H
    bytes 8..8+H UTF-8 JSON header (shape=[X,Y,Z,C], dtype, spacing,
                 optional encoder / patch_grid / pca / meta)
    remainder    little-endian payload, C-order [Z][Y][X][C]
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import BadVolume

MAGIC = b"FVL1"
_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


def read_volume(path):
    """Read an FVOL file; returns (data (X,Y,Z,C), header dict)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise BadVolume(f"{path}: not an FVOL file")
    (hlen,) = struct.unpack("<I", blob[4:8])
    header = json.loads(blob[8 : 8 + hlen].decode("utf-8"))
    x, y, z, c = (int(v) for v in header["shape"])
    dtype = _DTYPES[header["dtype"]]
    payload = blob[8 + hlen :]
    if len(payload) != x * y * z * c * dtype.itemsize:
        raise BadVolume(f"{path}: payload size does not match header")
    data = np.frombuffer(payload, dtype=dtype).reshape(z, y, x, c).transpose(2, 1, 0, 3)
    return data.copy(), header


def write_volume(path, data: np.ndarray, spacing=(1.0, 1.0, 1.0), *,
                 encoder: str | None = None, patch_grid=None, meta=None) -> None:
    """Write a float32 (X,Y,Z,C) array as FVOL, atomically (temp + rename)."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 4:
        raise BadVolume(f"expected 4-D data, got shape {data.shape}")
    header = {
        "shape": list(data.shape),
        "dtype": "f32",
        "spacing": [float(s) for s in spacing],
    }
    if encoder is not None:
        header["encoder"] = encoder
    if patch_grid is not None:
        header["patch_grid"] = [int(g) for g in patch_grid]
    if meta:
        header["meta"] = {str(k): str(v) for k, v in meta.items()}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = np.ascontiguousarray(data.transpose(2, 1, 0, 3)).tobytes()
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)
    os.replace(tmp, path)
