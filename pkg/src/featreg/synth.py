"""Seeded synthetic phantoms and ground-truth deformations.

Registration quality cannot be demonstrated on the private clinical
cohorts, so the test harness runs on synthetic pairs: smooth textured
blobs deformed by known smooth warps built from low-frequency noise.
The generator is deterministic for a fixed seed.
"""

from __future__ import annotations

import numpy as np

from .features import corner_aligned_coords
from .refine import warp
from .volume import FeatureVolume, LabelMask, _interp_axis


def _upsample_coarse(coarse: np.ndarray, size: int) -> np.ndarray:
    """Corner-aligned trilinear upsampling of a coarse noise lattice."""
    out = coarse.astype(np.float64)
    for axis in range(3):
        out = _interp_axis(out, corner_aligned_coords(size, coarse.shape[axis]), axis)
    return out


_TEXTURE_BANDS = ((5, 1.4), (9, 0.9), (17, 0.65), (33, 0.3))


def make_phantom(size: int, seed: int, amplitude: float = 60.0) -> FeatureVolume:
    """Smooth random blob phantom: multi-band noise plus Gaussian bumps.

    Texture is present everywhere and at several scales so the data
    term carries well-conditioned signal at every voxel; the dominant
    feature scales stay above the default discrete search radius.
    """
    rng = np.random.default_rng(seed)
    vol = np.zeros((size, size, size))
    for grid, weight in _TEXTURE_BANDS:
        vol += weight * amplitude * _upsample_coarse(rng.standard_normal((grid,) * 3), size)
    coords = np.arange(size, dtype=np.float64)
    xx = coords[:, None, None]
    yy = coords[None, :, None]
    zz = coords[None, None, :]
    for _ in range(5):
        center = rng.uniform(0.25, 0.75, size=3) * size
        sigma = rng.uniform(0.10, 0.20) * size
        amp = rng.uniform(0.8, 1.6) * amplitude * rng.choice((-1.0, 1.0))
        r2 = (xx - center[0]) ** 2 + (yy - center[1]) ** 2 + (zz - center[2]) ** 2
        vol += amp * np.exp(-r2 / (2.0 * sigma * sigma))
    return FeatureVolume(vol.astype(np.float32), meta={"synthetic": "blob-phantom"})


def make_masks(size: int, seed: int) -> LabelMask:
    """Body ball (label 1) with an embedded lesion ball (label 2)."""
    rng = np.random.default_rng(seed)
    coords = np.arange(size, dtype=np.float64)
    xx = coords[:, None, None]
    yy = coords[None, :, None]
    zz = coords[None, None, :]
    center = size / 2.0
    body_r = 0.34 * size
    mask = np.zeros((size, size, size), dtype=np.uint8)
    body = (xx - center) ** 2 + (yy - center) ** 2 + (zz - center) ** 2 <= body_r ** 2
    mask[body] = 1
    lesion_c = center + rng.uniform(-0.12, 0.12, size=3) * size
    lesion_r = max(2.5, 0.06 * size)
    lesion = ((xx - lesion_c[0]) ** 2 + (yy - lesion_c[1]) ** 2
              + (zz - lesion_c[2]) ** 2) <= lesion_r ** 2
    mask[lesion] = 2
    return LabelMask(mask, meta={"labels": "1:body,2:lesion"})


def make_smooth_field(size: int, seed: int, max_disp: float) -> np.ndarray:
    """Low-frequency random field scaled to a maximum vector norm."""
    rng = np.random.default_rng(seed)
    field = np.stack(
        [_upsample_coarse(rng.standard_normal((4, 4, 4)), size) for _ in range(3)],
        axis=-1,
    )
    norms = np.sqrt(np.sum(field * field, axis=-1))
    peak = float(norms.max())
    if peak > 0:
        field *= max_disp / peak
    return field.astype(np.float32)


def make_pair(size: int, seed: int, max_disp: float):
    """(fixed, moving, fixed_mask, moving_mask, gt_field) with exact truth.

    fixed is the backward-warp of moving by gt_field, so gt_field is by
    construction the displacement a registration run should recover.
    """
    moving = make_phantom(size, seed)
    moving_mask = make_masks(size, seed)
    gt_field = make_smooth_field(size, seed + 1, max_disp)
    fixed = warp(moving, gt_field)
    fixed.meta = {"synthetic": "warped-phantom"}
    fixed_mask = warp(moving_mask, gt_field)
    fixed_mask.meta = dict(moving_mask.meta)
    return fixed, moving, fixed_mask, moving_mask, gt_field
