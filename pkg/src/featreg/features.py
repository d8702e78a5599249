"""Slice feature stacks, joint PCA reduction and grid-to-volume upsampling.

Encoders emit one w*h*D token grid per encoded slice (every k-th axial
slice, 0-based {0, k, 2k, ...}). This module fills the skipped slices by
linear interpolation along z, fits a single PCA on the pooled tokens of
both volumes so they land in the same reduced space, and upsamples the
reduced grids to the original in-plane resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyStack, InvariantViolation, RankDeficient
from .volume import FeatureVolume, _interp_axis


@dataclass
class SliceFeatureStack:
    """Per-slice encoder token grids for one volume.

    grids: (n_encoded, w, h, D) float32, grids[i] belongs to slice z_indices[i].
    z_indices: strictly increasing, exactly {0, k, 2k, ...} below z_total.
    """

    grids: np.ndarray
    z_indices: np.ndarray
    z_total: int
    k: int

    def __post_init__(self):
        self.grids = np.asarray(self.grids, dtype=np.float32)
        self.z_indices = np.asarray(self.z_indices, dtype=np.int64)
        if self.grids.ndim != 4 or self.grids.shape[0] == 0:
            raise EmptyStack("stack needs at least one encoded (w,h,D) grid")
        if self.k < 1:
            raise InvariantViolation(f"slice stride k must be >= 1, got {self.k}")
        n = self.grids.shape[0]
        expected = np.arange(n, dtype=np.int64) * self.k
        if len(self.z_indices) != n or not np.array_equal(self.z_indices, expected):
            raise InvariantViolation("encoded z-indices must be {0, k, 2k, ...}")
        if self.z_indices[-1] >= self.z_total:
            raise InvariantViolation("encoded z-index beyond z_total")
        if n != 1 + (self.z_total - 1) // self.k:
            raise InvariantViolation("stack must cover every k-th slice of the volume")

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.grids.shape[1:3]

    @property
    def token_dim(self) -> int:
        return self.grids.shape[3]

    def tokens(self) -> np.ndarray:
        """All encoded tokens as a (n*w*h, D) matrix."""
        return self.grids.reshape(-1, self.token_dim)


@dataclass
class PcaProjection:
    """Centering mean plus orthonormal projection basis.

    basis columns are eigenvalue-ordered; the largest-magnitude entry of
    each column is nonnegative (deterministic sign convention).
    explained_variance are eigenvalues of the centered Gram matrix / M.
    """

    mean: np.ndarray
    basis: np.ndarray
    explained_variance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.basis = np.asarray(self.basis, dtype=np.float64)
        self.explained_variance = np.asarray(self.explained_variance, dtype=np.float64)
        d = self.basis.shape[1]
        gram = self.basis.T @ self.basis
        if not np.allclose(gram, np.eye(d), atol=1e-5):
            raise InvariantViolation("basis columns are not orthonormal")
        if np.any(np.diff(self.explained_variance) > 1e-12):
            raise InvariantViolation("explained_variance must be non-increasing")
        if np.any(self.explained_variance < -1e-12):
            raise InvariantViolation("explained_variance must be nonnegative")

    @property
    def d(self) -> int:
        return self.basis.shape[1]

    def record(self) -> dict:
        """JSON-ready {d, explained_variance} record for FVOL headers."""
        return {"d": int(self.d),
                "explained_variance": [float(v) for v in self.explained_variance]}


def interpolate_skipped_slices(stack: SliceFeatureStack) -> np.ndarray:
    """Densify a slice stack to (w, h, z_total, D) by linear interpolation in z.

    Encoded slices are copied verbatim; slices between two encoded ones
    are distance-weighted averages of the bracketing grids; slices past
    the last encoded index replicate it.
    """
    n, w, h, d = stack.grids.shape
    out = np.empty((w, h, stack.z_total, d), dtype=np.float32)
    k = stack.k
    for z in range(stack.z_total):
        i0, rem = divmod(z, k)
        if rem == 0:
            out[:, :, z, :] = stack.grids[i0]
        elif i0 + 1 >= n:
            out[:, :, z, :] = stack.grids[n - 1]
        else:
            t = rem / k
            out[:, :, z, :] = (1.0 - t) * stack.grids[i0] + t * stack.grids[i0 + 1]
    return out


def fit_joint_pca(ref_stack: SliceFeatureStack, mov_stack: SliceFeatureStack,
                  d: int) -> PcaProjection:
    """Fit PCA on the pooled encoded tokens of both volumes.

    The token rows of both stacks are concatenated, mean-centered, and
    the top-d eigenvectors of the M-normalized covariance form the
    basis. Trailing zero eigenvalues are permitted (rank deficiency is
    only an error when M < d).
    """
    if ref_stack.token_dim != mov_stack.token_dim:
        raise DimensionMismatch(
            f"token dims differ: {ref_stack.token_dim} vs {mov_stack.token_dim}")
    dim = ref_stack.token_dim
    if d < 1 or d > dim:
        raise DimensionMismatch(f"d={d} outside [1, {dim}]")
    rows = np.concatenate([ref_stack.tokens(), mov_stack.tokens()]).astype(np.float64)
    m = rows.shape[0]
    if m < d:
        raise RankDeficient(f"only {m} token rows for d={d}")
    mean = rows.mean(axis=0)
    centered = rows - mean
    cov = centered.T @ centered / m
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:d]
    basis = evecs[:, order]
    evals = np.maximum(evals[order], 0.0)
    # sign convention: largest-magnitude entry of each column nonnegative
    for j in range(d):
        col = basis[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            basis[:, j] = -col
    return PcaProjection(mean=mean, basis=basis, explained_variance=evals)


def apply_pca(grid_stack: np.ndarray, proj: PcaProjection) -> np.ndarray:
    """Project tokens: out = (x - mean) @ basis, same spatial dims, C=d."""
    grid_stack = np.asarray(grid_stack)
    if grid_stack.shape[-1] != proj.mean.shape[0]:
        raise DimensionMismatch(
            f"channel dim {grid_stack.shape[-1]} != projection D {proj.mean.shape[0]}")
    flat = grid_stack.reshape(-1, grid_stack.shape[-1]).astype(np.float64)
    reduced = (flat - proj.mean) @ proj.basis
    return reduced.reshape(grid_stack.shape[:-1] + (proj.d,)).astype(np.float32)


def upsample_to_volume(reduced: np.ndarray, target_xy: tuple[int, int],
                       spacing=(1.0, 1.0, 1.0), meta=None,
                       pca: dict | None = None) -> FeatureVolume:
    """Bilinear, corner-aligned in-plane upsampling of a (w,h,Z,d) stack.

    z is untouched; target (X, Y) must be at least (w, h).
    """
    reduced = np.asarray(reduced, dtype=np.float32)
    w, h = reduced.shape[:2]
    tx, ty = int(target_xy[0]), int(target_xy[1])
    if tx < w or ty < h:
        raise DimensionMismatch(f"target {target_xy} smaller than grid {(w, h)}")
    out = reduced
    if (tx, ty) != (w, h):
        cx = corner_aligned_coords(tx, w)
        cy = corner_aligned_coords(ty, h)
        out = _interp_axis(out, cx, axis=0)
        out = _interp_axis(out, cy, axis=1)
        out = out.astype(np.float32)
    return FeatureVolume(out.copy(), spacing=spacing, meta=dict(meta or {}), pca=pca)


def corner_aligned_coords(n_out: int, n_in: int) -> np.ndarray:
    """Source positions mapping output sample i to (n_in-1) * i / (n_out-1)."""
    if n_out == 1:
        return np.zeros(1, dtype=np.float64)
    return np.arange(n_out, dtype=np.float64) * ((n_in - 1) / (n_out - 1))


# --- stack <-> FVOL plumbing ------------------------------------------------

def stack_to_volume(stack: SliceFeatureStack, spacing=(1.0, 1.0, 1.0),
                    source_dims: tuple[int, int, int] | None = None,
                    encoder: str | None = None) -> FeatureVolume:
    """Pack a stack into an FVOL-serializable volume (shape [w,h,n,D])."""
    w, h = stack.grid_shape
    meta = {"k": str(stack.k), "z_total": str(stack.z_total)}
    if source_dims is not None:
        meta["source_dims"] = ",".join(str(int(v)) for v in source_dims)
    data = np.ascontiguousarray(stack.grids.transpose(1, 2, 0, 3))
    return FeatureVolume(data, spacing=spacing, meta=meta,
                         encoder=encoder, patch_grid=(w, h))


def stack_from_volume(vol: FeatureVolume) -> SliceFeatureStack:
    """Rebuild a SliceFeatureStack from a stack-layout FeatureVolume."""
    if vol.patch_grid is None or "k" not in vol.meta or "z_total" not in vol.meta:
        raise InvariantViolation("volume lacks patch_grid/k/z_total stack metadata")
    k = int(vol.meta["k"])
    z_total = int(vol.meta["z_total"])
    grids = np.ascontiguousarray(vol.data.transpose(2, 0, 1, 3))
    n = grids.shape[0]
    return SliceFeatureStack(grids=grids, z_indices=np.arange(n) * k,
                             z_total=z_total, k=k)
