"""Slice preprocessing: min-max scaling, channel replication, resizing
and per-encoder normalization.

Every recipe starts identically: intensities are min-max scaled to
[0, 255] (a constant slice maps to all zeros), replicated to 3
channels, and resized bilinearly to the encoder's canonical size. The
published mean/std normalization of the target model is then applied
in the units that model expects (0-255 for the SAM family, 0-1 for
ImageNet/CLIP-style pipelines).
"""

from __future__ import annotations

import numpy as np

from .errors import SliceEncError
from .specs import EncoderSpec

# recipe -> (scale divisor applied to the 0-255 image, per-channel mean, std)
RECIPES = {
    "sam-255": (1.0,
                (123.675, 116.28, 103.53),
                (58.395, 57.12, 57.375)),
    "imagenet-unit": (255.0,
                      (0.485, 0.456, 0.406),
                      (0.229, 0.224, 0.225)),
    "clip-unit": (255.0,
                  (0.48145466, 0.4578275, 0.40821073),
                  (0.26862954, 0.26130258, 0.27577711)),
    "unit": (255.0, (0.0, 0.0, 0.0), (1.0, 1.0, 1.0)),
}


def _resize_bilinear(img: np.ndarray, size: int) -> np.ndarray:
    """Corner-aligned separable bilinear resize of a 2-D image."""
    for axis in range(2):
        n_in = img.shape[axis]
        if n_in == size:
            continue
        if size == 1 or n_in == 1:
            idx = np.zeros(size, dtype=np.intp)
            img = np.take(img, idx, axis=axis)
            continue
        pos = np.arange(size, dtype=np.float64) * ((n_in - 1) / (size - 1))
        i0 = np.minimum(np.floor(pos).astype(np.intp), n_in - 2)
        t = pos - i0
        lo = np.take(img, i0, axis=axis)
        hi = np.take(img, i0 + 1, axis=axis)
        shape = [1, 1]
        shape[axis] = size
        t = t.reshape(shape[: img.ndim])
        img = lo * (1.0 - t) + hi * t
    return img


def preprocess_slice(slice_2d: np.ndarray, spec: EncoderSpec) -> np.ndarray:
    """Encoder-ready (canonical, canonical, 3) float32 image.

    Constant slices are valid: after min-max scaling they become all
    zeros, then the recipe's normalization applies as usual.
    """
    img = np.asarray(slice_2d, dtype=np.float64)
    if img.ndim != 2:
        raise SliceEncError(f"expected a 2-D slice, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise SliceEncError("slice contains NaN or Inf")
    lo = float(img.min())
    hi = float(img.max())
    if hi > lo:
        img = (img - lo) * (255.0 / (hi - lo))
    else:
        img = np.zeros_like(img)
    img = _resize_bilinear(img, spec.canonical_size)
    divisor, mean, std = RECIPES[spec.recipe]
    out = np.empty((spec.canonical_size, spec.canonical_size, 3), dtype=np.float32)
    for ch in range(3):
        out[..., ch] = (img / divisor - mean[ch]) / std[ch]
    return out
