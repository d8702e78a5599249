"""Core tensor containers, the FVOL file format, and spatial preprocessing.

FVOL layout (bit-exact):
    bytes 0-3    ASCII magic "FVL1"
    bytes 4-7    unsigned 32-bit little-endian header length H
    bytes 8..8+H UTF-8 JSON header
    remainder    raw little-endian payload, C-order [Z][Y][X][C]

Required header keys: shape=[X,Y,Z,C], dtype in {"f32","u8"}, spacing.
Optional keys: encoder, patch_grid=[w,h], pca={d, explained_variance},
meta (free-form string map).

In memory, volumes are numpy arrays of shape (X, Y, Z, C) and masks
(X, Y, Z); the [Z][Y][X][C] order applies to the file payload only.
All containers are treated as immutable after construction.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadHeader,
    BadMagic,
    DegenerateVolume,
    DimensionMismatch,
    InvariantViolation,
    IoFailure,
    SizeTooSmall,
    TruncatedPayload,
)

MAGIC = b"FVL1"

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


@dataclass
class FeatureVolume:
    """Multi-channel float volume with voxel spacing metadata.

    data: (X, Y, Z, C) float32, all finite.
    spacing: (sx, sy, sz) in mm, strictly positive.
    meta: free-form string map (encoder id, provenance, ...).
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    meta: dict[str, str] = field(default_factory=dict)
    encoder: str | None = None
    patch_grid: tuple[int, int] | None = None
    pca: dict | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim == 3:
            self.data = self.data[..., None]
        if self.data.ndim != 4:
            raise InvariantViolation(f"expected 4-D data, got ndim={self.data.ndim}")
        if min(self.data.shape) < 1:
            raise InvariantViolation(f"degenerate shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise InvariantViolation("volume contains NaN or Inf")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise InvariantViolation(f"spacing must be 3 positive values, got {self.spacing}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[:3]

    @property
    def channels(self) -> int:
        return self.data.shape[3]


@dataclass
class LabelMask:
    """Integer-labelled volume; 0 is background.

    data: (X, Y, Z) uint8.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint8)
        if self.data.ndim == 4 and self.data.shape[3] == 1:
            self.data = self.data[..., 0]
        if self.data.ndim != 3:
            raise InvariantViolation(f"expected 3-D mask data, got ndim={self.data.ndim}")
        if min(self.data.shape) < 1:
            raise InvariantViolation(f"degenerate shape {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise InvariantViolation(f"spacing must be 3 positive values, got {self.spacing}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def labels(self) -> list[int]:
        """Sorted nonzero label values present in the mask."""
        return [int(v) for v in np.unique(self.data) if v != 0]


def _header_dict(vol: FeatureVolume | LabelMask) -> dict:
    if isinstance(vol, LabelMask):
        shape = list(vol.dims) + [1]
        dtype = "u8"
    else:
        shape = list(vol.data.shape)
        dtype = "f32"
    header = {"shape": shape, "dtype": dtype, "spacing": list(vol.spacing)}
    if vol.meta:
        header["meta"] = {str(k): str(v) for k, v in vol.meta.items()}
    if isinstance(vol, FeatureVolume):
        if vol.encoder is not None:
            header["encoder"] = vol.encoder
        if vol.patch_grid is not None:
            header["patch_grid"] = [int(g) for g in vol.patch_grid]
        if vol.pca is not None:
            header["pca"] = vol.pca
    return header


def write_fvol(vol: FeatureVolume | LabelMask, path) -> None:
    """Serialize a volume or mask to an FVOL file (deterministic bytes)."""
    if isinstance(vol, LabelMask):
        payload_arr = vol.data[..., None]
    else:
        if not np.all(np.isfinite(vol.data)):
            raise InvariantViolation("refusing to write NaN/Inf payload")
        payload_arr = vol.data
    header = json.dumps(_header_dict(vol), sort_keys=True, separators=(",", ":")).encode("utf-8")
    # payload in file order [Z][Y][X][C]
    payload = np.ascontiguousarray(payload_arr.transpose(2, 1, 0, 3)).tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_fvol(path) -> FeatureVolume | LabelMask:
    """Read an FVOL file; f32 payloads become FeatureVolume, u8 LabelMask."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if blob[:4] != MAGIC:
        raise BadMagic(f"{path}: not an FVOL file")
    if len(blob) < 8:
        raise TruncatedPayload(f"{path}: missing header length")
    (hlen,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + hlen:
        raise TruncatedPayload(f"{path}: header shorter than declared")
    try:
        header = json.loads(blob[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadHeader(f"{path}: header is not valid JSON: {exc}") from exc
    for key in ("shape", "dtype", "spacing"):
        if key not in header:
            raise BadHeader(f"{path}: missing required header key '{key}'")
    shape = header["shape"]
    if len(shape) != 4 or any(int(s) < 1 for s in shape):
        raise BadHeader(f"{path}: bad shape {shape}")
    x, y, z, c = (int(s) for s in shape)
    dtype_name = header["dtype"]
    if dtype_name not in _DTYPES:
        raise BadHeader(f"{path}: unknown dtype '{dtype_name}'")
    dtype = _DTYPES[dtype_name]
    expected = x * y * z * c * dtype.itemsize
    payload = blob[8 + hlen :]
    if len(payload) != expected:
        raise TruncatedPayload(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(z, y, x, c).transpose(2, 1, 0, 3)
    spacing = tuple(float(s) for s in header["spacing"])
    meta = {str(k): str(v) for k, v in header.get("meta", {}).items()}
    if dtype_name == "u8":
        if c != 1:
            raise BadHeader(f"{path}: u8 payloads must have C=1, got C={c}")
        return LabelMask(data=arr[..., 0].copy(), spacing=spacing, meta=meta)
    pg = header.get("patch_grid")
    return FeatureVolume(
        data=arr.copy(),
        spacing=spacing,
        meta=meta,
        encoder=header.get("encoder"),
        patch_grid=tuple(int(g) for g in pg) if pg is not None else None,
        pca=header.get("pca"),
    )


def _interp_axis(arr: np.ndarray, coords: np.ndarray, axis: int) -> np.ndarray:
    """1-D linear interpolation of `arr` at float positions `coords` along `axis`.

    Positions are clamped to [0, n-1]; exact at integer positions.
    """
    n = arr.shape[axis]
    pos = np.clip(np.asarray(coords, dtype=np.float64), 0.0, n - 1.0)
    i0 = np.floor(pos).astype(np.intp)
    np.minimum(i0, max(n - 2, 0), out=i0)
    t = pos - i0
    lo = np.take(arr, i0, axis=axis)
    if n == 1:
        return lo.astype(np.float64, copy=False)
    hi = np.take(arr, i0 + 1, axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = len(pos)
    t = t.reshape(shape)
    return lo * (1.0 - t) + hi * t


def _nearest_axis(arr: np.ndarray, coords: np.ndarray, axis: int) -> np.ndarray:
    """Nearest-neighbour gather along one axis (half-up rounding)."""
    n = arr.shape[axis]
    idx = np.floor(np.asarray(coords, dtype=np.float64) + 0.5).astype(np.intp)
    np.clip(idx, 0, n - 1, out=idx)
    return np.take(arr, idx, axis=axis)


def resample_isotropic(
    vol: FeatureVolume | LabelMask, target_spacing: float
) -> FeatureVolume | LabelMask:
    """Resample to isotropic voxels of `target_spacing` mm.

    Output dims = round(dims * spacing / target). Float volumes are sampled
    trilinearly (separable, per channel), masks nearest-neighbour. Voxel i
    of the output sits at physical position i * target_spacing along each
    axis, matching position j * spacing of the input.
    """
    if target_spacing <= 0:
        raise InvariantViolation(f"target spacing must be positive, got {target_spacing}")
    dims = vol.dims
    new_dims = tuple(
        int(np.floor(d * s / target_spacing + 0.5)) for d, s in zip(dims, vol.spacing)
    )
    if min(new_dims) < 1:
        raise DegenerateVolume(f"target spacing {target_spacing} collapses dims {dims} to {new_dims}")
    new_spacing = (target_spacing,) * 3
    if vol.spacing == new_spacing:
        if isinstance(vol, LabelMask):
            return LabelMask(vol.data.copy(), new_spacing, dict(vol.meta))
        return FeatureVolume(vol.data.copy(), new_spacing, dict(vol.meta),
                             vol.encoder, vol.patch_grid, vol.pca)
    coords = [
        np.arange(nd, dtype=np.float64) * (target_spacing / s)
        for nd, s in zip(new_dims, vol.spacing)
    ]
    if isinstance(vol, LabelMask):
        out = vol.data
        for axis in range(3):
            out = _nearest_axis(out, coords[axis], axis)
        return LabelMask(out.copy(), new_spacing, dict(vol.meta))
    out = vol.data
    for axis in range(3):
        out = _interp_axis(out, coords[axis], axis)
    return FeatureVolume(out.astype(np.float32), new_spacing, dict(vol.meta),
                         vol.encoder, vol.patch_grid, vol.pca)


def pad_to_cube(
    vol: FeatureVolume | LabelMask, size: int, fill: float = 0.0
) -> FeatureVolume | LabelMask:
    """Pad to a centred size**3 cube; odd remainders pad the high side."""
    dims = vol.dims
    if size < max(dims):
        raise SizeTooSmall(f"cube size {size} < max dim {max(dims)}")
    offsets = tuple((size - d) // 2 for d in dims)
    if isinstance(vol, LabelMask):
        out = np.full((size, size, size), int(fill), dtype=np.uint8)
        ox, oy, oz = offsets
        out[ox : ox + dims[0], oy : oy + dims[1], oz : oz + dims[2]] = vol.data
        return LabelMask(out, vol.spacing, dict(vol.meta))
    out = np.full((size, size, size, vol.channels), np.float32(fill), dtype=np.float32)
    ox, oy, oz = offsets
    out[ox : ox + dims[0], oy : oy + dims[1], oz : oz + dims[2], :] = vol.data
    return FeatureVolume(out, vol.spacing, dict(vol.meta), vol.encoder, vol.patch_grid, vol.pca)


def cube_offsets(dims: tuple[int, int, int], size: int) -> tuple[int, int, int]:
    """Low-side offsets used by pad_to_cube for the given dims."""
    if size < max(dims):
        raise SizeTooSmall(f"cube size {size} < max dim {max(dims)}")
    return tuple((size - d) // 2 for d in dims)


def check_same_grid(a, b, what: str = "volumes") -> None:
    """Raise DimensionMismatch unless dims agree."""
    if a.dims != b.dims:
        raise DimensionMismatch(f"{what} disagree in dims: {a.dims} vs {b.dims}")
