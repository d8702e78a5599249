"""Stub encoder: a fixed, weights-free pixel function.

Each patch of the preprocessed slice is flattened row-major and split
into token_dim equal pixel bands; each token component is the mean of
one band. Deterministic and linear in the pixels, so integration tests
exercise the whole extraction path without model downloads.
"""

from __future__ import annotations

import numpy as np

from .specs import EncoderSpec


def encode_slice(preprocessed: np.ndarray, spec: EncoderSpec) -> np.ndarray:
    """(grid, grid, token_dim) float32 tokens from a preprocessed slice."""
    side = spec.grid_side
    p = spec.patch_size
    d = spec.token_dim
    img = preprocessed[..., 0].astype(np.float64)  # channels identical by recipe
    patches = img.reshape(side, p, side, p).transpose(0, 2, 1, 3).reshape(side, side, p * p)
    band = (p * p) // d
    usable = band * d
    tokens = patches[..., :usable].reshape(side, side, d, band).mean(axis=-1)
    return tokens.astype(np.float32)
