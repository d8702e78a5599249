"""Hot numeric kernels with a compiled fast path.

The Cython extension ``featreg.kernels._ckernels`` is optional; the
numpy implementation is the reference and is selected when the
extension is missing. Set FEATREG_KERNELS=py to force the fallback or
FEATREG_KERNELS=cy to require the extension.
"""

from __future__ import annotations

import os

import numpy as np

from . import numpy_backend

_choice = os.environ.get("FEATREG_KERNELS", "auto").lower()
_compiled = None
if _choice in ("auto", "cy"):
    try:
        from . import _ckernels as _compiled
    except ImportError:
        _compiled = None
        if _choice == "cy":
            raise

backend_name = "cython" if _compiled is not None else "numpy"


def _f32c(arr) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype=np.float32)


def warp_trilinear(vol: np.ndarray, field: np.ndarray) -> np.ndarray:
    """Backward trilinear warp of a (X,Y,Z,C) float volume."""
    vol = _f32c(vol)
    field = _f32c(field)
    if _compiled is not None:
        return _compiled.warp_trilinear(vol, field)
    return numpy_backend.warp_trilinear(vol, field)


def ssd_energy_gradient(ref: np.ndarray, mov: np.ndarray, field: np.ndarray):
    """Mean-SSD data term and its float64 gradient w.r.t. the field."""
    ref = _f32c(ref)
    mov = _f32c(mov)
    field = _f32c(field)
    if _compiled is not None:
        return _compiled.ssd_energy_gradient(ref, mov, field)
    return numpy_backend.ssd_energy_gradient(ref, mov, field)


def cost_volume_ssd(ref: np.ndarray, mov: np.ndarray, g: int, offsets: np.ndarray) -> np.ndarray:
    """Blockwise mean-SSD cost volume over integer displacement candidates."""
    ref = _f32c(ref)
    mov = _f32c(mov)
    if _compiled is not None:
        return _compiled.cost_volume_ssd(ref, mov, int(g),
                                         np.ascontiguousarray(offsets, dtype=np.int64))
    return numpy_backend.cost_volume_ssd(ref, mov, int(g), np.asarray(offsets))


def warp_nearest(mask: np.ndarray, field: np.ndarray) -> np.ndarray:
    """Nearest-neighbour backward warp for integer label masks."""
    return numpy_backend.warp_nearest(np.asarray(mask), np.asarray(field, dtype=np.float32))
