"""Vectorized numpy implementations of the hot kernels.

This is the reference backend; the compiled extension mirrors its
semantics exactly. All interpolation arithmetic runs in float64 so the
two backends agree to rounding and analytic gradients match central
finite differences on the quadratic energy.

Sampling convention (shared by both backends): sample position p is
clamped to [0, dim-1] per axis, the cell index is min(floor(p), dim-2),
and the sampler derivative is the in-cell slope, taken as the right
limit at integer positions and zero wherever p lies outside [0, dim-1)
(the clamped sample is constant there).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def _cell_indices(pos: np.ndarray, n: int):
    """Clamped cell index, fraction and derivative mask for one axis."""
    pc = np.clip(pos, 0.0, float(n - 1))
    i0 = np.floor(pc).astype(np.intp)
    np.minimum(i0, max(n - 2, 0), out=i0)
    f = pc - i0
    active = (pos >= 0.0) & (pos < n - 1.0)
    i1 = i0 + 1 if n > 1 else i0
    return i0, i1, f, active


def _corner_weights(fx, fy, fz):
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
    return (
        gx * gy * gz, fx * gy * gz, gx * fy * gz, fx * fy * gz,
        gx * gy * fz, fx * gy * fz, gx * fy * fz, fx * fy * fz,
    )


def _positions(field: np.ndarray):
    x, y, z, _ = field.shape
    px = np.arange(x, dtype=np.float64)[:, None, None] + field[..., 0]
    py = np.arange(y, dtype=np.float64)[None, :, None] + field[..., 1]
    pz = np.arange(z, dtype=np.float64)[None, None, :] + field[..., 2]
    return px, py, pz


def _gather(vol, ix, iy, iz):
    return vol[ix, iy, iz]


def warp_trilinear(vol: np.ndarray, field: np.ndarray) -> np.ndarray:
    """Backward-warp: out[x] = vol sampled trilinearly at x + field(x)."""
    x, y, z, _ = vol.shape
    px, py, pz = _positions(field)
    ix0, ix1, fx, _ = _cell_indices(px, x)
    iy0, iy1, fy, _ = _cell_indices(py, y)
    iz0, iz1, fz, _ = _cell_indices(pz, z)
    w = _corner_weights(fx, fy, fz)
    out = (
        w[0][..., None] * _gather(vol, ix0, iy0, iz0)
        + w[1][..., None] * _gather(vol, ix1, iy0, iz0)
        + w[2][..., None] * _gather(vol, ix0, iy1, iz0)
        + w[3][..., None] * _gather(vol, ix1, iy1, iz0)
        + w[4][..., None] * _gather(vol, ix0, iy0, iz1)
        + w[5][..., None] * _gather(vol, ix1, iy0, iz1)
        + w[6][..., None] * _gather(vol, ix0, iy1, iz1)
        + w[7][..., None] * _gather(vol, ix1, iy1, iz1)
    )
    return out.astype(np.float32)


def ssd_energy_gradient(ref: np.ndarray, mov: np.ndarray, field: np.ndarray):
    """Mean-SSD data term and its gradient w.r.t. the field.

    Returns (data, grad) with data = mean((ref - mov∘phi)^2) over voxels
    and channels, grad float64 of shape (X, Y, Z, 3).
    """
    x, y, z, c = ref.shape
    n = x * y * z * c
    px, py, pz = _positions(field)
    ix0, ix1, fx, ax = _cell_indices(px, x)
    iy0, iy1, fy, ay = _cell_indices(py, y)
    iz0, iz1, fz, az = _cell_indices(pz, z)
    c000 = _gather(mov, ix0, iy0, iz0).astype(np.float64)
    c100 = _gather(mov, ix1, iy0, iz0).astype(np.float64)
    c010 = _gather(mov, ix0, iy1, iz0).astype(np.float64)
    c110 = _gather(mov, ix1, iy1, iz0).astype(np.float64)
    c001 = _gather(mov, ix0, iy0, iz1).astype(np.float64)
    c101 = _gather(mov, ix1, iy0, iz1).astype(np.float64)
    c011 = _gather(mov, ix0, iy1, iz1).astype(np.float64)
    c111 = _gather(mov, ix1, iy1, iz1).astype(np.float64)
    w = _corner_weights(fx, fy, fz)
    s = (
        w[0][..., None] * c000 + w[1][..., None] * c100
        + w[2][..., None] * c010 + w[3][..., None] * c110
        + w[4][..., None] * c001 + w[5][..., None] * c101
        + w[6][..., None] * c011 + w[7][..., None] * c111
    )
    r = s - ref
    data = float(np.sum(r * r) / n)
    gx_, gy_, gz_ = 1.0 - fx, 1.0 - fy, 1.0 - fz
    # in-cell slopes of the sampler along each axis
    dsdx = (
        ((c100 - c000) * (gy_ * gz_)[..., None])
        + ((c110 - c010) * (fy * gz_)[..., None])
        + ((c101 - c001) * (gy_ * fz)[..., None])
        + ((c111 - c011) * (fy * fz)[..., None])
    )
    dsdy = (
        ((c010 - c000) * (gx_ * gz_)[..., None])
        + ((c110 - c100) * (fx * gz_)[..., None])
        + ((c011 - c001) * (gx_ * fz)[..., None])
        + ((c111 - c101) * (fx * fz)[..., None])
    )
    dsdz = (
        ((c001 - c000) * (gx_ * gy_)[..., None])
        + ((c101 - c100) * (fx * gy_)[..., None])
        + ((c011 - c010) * (gx_ * fy)[..., None])
        + ((c111 - c110) * (fx * fy)[..., None])
    )
    scale = 2.0 / n
    grad = np.empty(field.shape, dtype=np.float64)
    grad[..., 0] = scale * np.sum(r * dsdx, axis=-1) * ax
    grad[..., 1] = scale * np.sum(r * dsdy, axis=-1) * ay
    grad[..., 2] = scale * np.sum(r * dsdz, axis=-1) * az
    return data, grad


def _block_reduce(cmap: np.ndarray, g: int) -> np.ndarray:
    out = cmap
    for axis in range(3):
        edges = np.arange(0, cmap.shape[axis], g)
        out = np.add.reduceat(out, edges, axis=axis)
    return out


def _candidate_cost(ref, mov, g, off, counts):
    x, y, z, _ = ref.shape
    ix = np.clip(np.arange(x) + off[0], 0, x - 1)
    iy = np.clip(np.arange(y) + off[1], 0, y - 1)
    iz = np.clip(np.arange(z) + off[2], 0, z - 1)
    d = ref.astype(np.float64) - mov[np.ix_(ix, iy, iz)]
    cmap = np.einsum("xyzc,xyzc->xyz", d, d)
    return _block_reduce(cmap, g) / counts


def cost_volume_ssd(ref: np.ndarray, mov: np.ndarray, g: int, offsets: np.ndarray) -> np.ndarray:
    """Per-block mean SSD for each integer displacement candidate.

    Returns float32 (Gx, Gy, Gz, L). Out-of-bounds moving samples clamp
    to the nearest edge voxel; each block cost is normalized by the
    block's actual voxel count (edge blocks may be partial).
    """
    x, y, z, _ = ref.shape
    gdims = tuple(-(-d // g) for d in (x, y, z))
    per_axis = [np.minimum(np.arange(gd) * g + g, d) - np.arange(gd) * g
                for gd, d in zip(gdims, (x, y, z))]
    counts = per_axis[0][:, None, None] * per_axis[1][None, :, None] * per_axis[2][None, None, :]
    counts = counts.astype(np.float64)
    out = np.empty(gdims + (len(offsets),), dtype=np.float32)
    workers = int(os.environ.get("FEATREG_THREADS", "1") or "1")
    if workers > 1:
        def job(l):
            out[..., l] = _candidate_cost(ref, mov, g, offsets[l], counts)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(job, range(len(offsets))))
    else:
        for l in range(len(offsets)):
            out[..., l] = _candidate_cost(ref, mov, g, offsets[l], counts)
    return out


def warp_nearest(mask: np.ndarray, field: np.ndarray) -> np.ndarray:
    """Nearest-neighbour backward warp for label masks (half-up rounding)."""
    x, y, z = mask.shape
    px, py, pz = _positions(field)
    ix = np.clip(np.floor(px + 0.5).astype(np.intp), 0, x - 1)
    iy = np.clip(np.floor(py + 0.5).astype(np.intp), 0, y - 1)
    iz = np.clip(np.floor(pz + 0.5).astype(np.intp), 0, z - 1)
    return mask[ix, iy, iz]
