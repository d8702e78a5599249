"""Slice-by-slice feature extraction into stack-layout FVOL files."""

from __future__ import annotations

import numpy as np

from . import fvol, stub
from .errors import BadVolume
from .preprocess import preprocess_slice
from .specs import EncoderSpec


def extract_features(volume_path, spec: EncoderSpec, k: int, out_path) -> dict:
    """Encode every k-th axial slice of a volume and write the token stack.

    Output FVOL shape is [grid, grid, n_encoded, token_dim] with
    patch_grid/encoder header keys and k / z_total / source_dims /
    source_spacing metadata, which is exactly what the registration
    engine's stack loader expects. CLS tokens never enter the file.
    Returns a summary dict (encoded slice indices, grid geometry).
    """
    if k < 1:
        raise BadVolume(f"slice stride k must be >= 1, got {k}")
    data, header = fvol.read_volume(volume_path)
    if header["dtype"] != "f32" or data.shape[3] != 1:
        raise BadVolume(f"{volume_path}: expected a single-channel f32 volume")
    x, y, z_total, _ = data.shape
    z_indices = list(range(0, z_total, k))
    if spec.id == "stub":
        encode = lambda img: stub.encode_slice(img, spec)
    else:
        from .models import load_encoder

        encode = load_encoder(spec)
    grids = []
    for z in z_indices:
        prepared = preprocess_slice(data[:, :, z, 0], spec)
        tokens = encode(prepared)
        if tokens.shape != (spec.grid_side, spec.grid_side, spec.token_dim):
            raise BadVolume(
                f"{spec.id}: encoder returned {tokens.shape}, expected "
                f"({spec.grid_side}, {spec.grid_side}, {spec.token_dim})")
        grids.append(tokens)
    stack = np.stack(grids)  # (n, w, h, D)
    payload = np.ascontiguousarray(stack.transpose(1, 2, 0, 3))
    spacing = header.get("spacing", [1.0, 1.0, 1.0])
    meta = {
        "k": str(k),
        "z_total": str(z_total),
        "source_dims": f"{x},{y},{z_total}",
        "source_spacing": ",".join(str(float(s)) for s in spacing),
        "tap": "final",
    }
    fvol.write_volume(out_path, payload, spacing=spacing, encoder=spec.id,
                      patch_grid=(spec.grid_side, spec.grid_side), meta=meta)
    return {
        "encoder": spec.id,
        "encoded_slices": z_indices,
        "grid_side": spec.grid_side,
        "token_dim": spec.token_dim,
        "out": str(out_path),
    }
