"""Stage-1 global alignment: discrete displacement cost volumes and the
coupled convex solve.

The fixed volume is tiled into g^3 control blocks. For every block and
every quantized displacement candidate we record the mean SSD between
the fixed block and the displaced moving samples, then alternate
per-block candidate selection (data cost + coupling toward the
neighbourhood mean) with 6-neighbour smoothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionMismatch, EmptyCostVolume, InvariantViolation
from .features import corner_aligned_coords
from .volume import FeatureVolume, _interp_axis, check_same_grid


@dataclass
class ControlGrid:
    """Control-point lattice: one point per g^3 block of the volume."""

    spacing: int
    dims: tuple[int, int, int]
    vol_dims: tuple[int, int, int]

    @classmethod
    def for_volume(cls, vol_dims: tuple[int, int, int], spacing: int) -> "ControlGrid":
        if spacing < 1:
            raise InvariantViolation(f"control spacing must be >= 1, got {spacing}")
        dims = tuple(-(-d // spacing) for d in vol_dims)
        return cls(spacing=int(spacing), dims=dims, vol_dims=tuple(int(d) for d in vol_dims))

    @property
    def n_points(self) -> int:
        gx, gy, gz = self.dims
        return gx * gy * gz


@dataclass
class CandidateSet:
    """Integer displacement candidates: multiples of q within [-r, r]^3.

    offsets are ordered by (|v|^2, x, y, z) so a first-wins argmin
    realizes the tie-break rule (smaller norm, then lexicographic);
    the zero vector is always offsets[0].
    """

    radius: int
    step: int
    offsets: np.ndarray

    @classmethod
    def build(cls, radius: int, step: int) -> "CandidateSet":
        if step < 1 or radius < 0 or radius % step != 0:
            raise InvariantViolation(f"need radius divisible by step, got r={radius} q={step}")
        axis = np.arange(-radius, radius + 1, step, dtype=np.int64)
        grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
        norms = (grid ** 2).sum(axis=1)
        order = np.lexsort((grid[:, 2], grid[:, 1], grid[:, 0], norms))
        return cls(radius=int(radius), step=int(step), offsets=grid[order])

    def __len__(self) -> int:
        return len(self.offsets)


@dataclass
class CostVolume:
    """Per-control-point dissimilarity over the candidate set.

    values: (Gx, Gy, Gz, L) float32, nonnegative and finite.
    """

    grid: ControlGrid
    candidates: CandidateSet
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.shape != self.grid.dims + (len(self.candidates),):
            raise InvariantViolation(
                f"cost shape {self.values.shape} != grid {self.grid.dims} x L={len(self.candidates)}")
        if self.values.size == 0:
            raise EmptyCostVolume("cost volume has no entries")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise InvariantViolation("cost entries must be finite and nonnegative")


def build_cost_volume(f_ref: FeatureVolume, f_mov: FeatureVolume,
                      grid: ControlGrid, candidates: CandidateSet) -> CostVolume:
    """Mean SSD per control block and candidate displacement.

    cost(p, v) = sum over block voxels x and channels c of
    (ref[x,c] - mov[x+v,c])^2 / |block|, with out-of-bounds moving
    samples clamped to the nearest edge voxel.
    """
    check_same_grid(f_ref, f_mov)
    if f_ref.channels != f_mov.channels:
        raise DimensionMismatch(
            f"channel counts differ: {f_ref.channels} vs {f_mov.channels}")
    if grid.vol_dims != f_ref.dims:
        raise DimensionMismatch(f"grid built for {grid.vol_dims}, volumes are {f_ref.dims}")
    values = kernels.cost_volume_ssd(f_ref.data, f_mov.data, grid.spacing,
                                     candidates.offsets)
    return CostVolume(grid=grid, candidates=candidates, values=values)


def select_displacements(cost: CostVolume, prior: np.ndarray, alpha: float) -> np.ndarray:
    """Per-point argmin of cost(p, v) + alpha * |v - prior(p)|^2.

    Ties resolve to the smaller-norm, then lexicographically smaller
    candidate (guaranteed by the candidate ordering plus first-wins
    argmin). Returns float64 (Gx, Gy, Gz, 3).
    """
    offs = cost.candidates.offsets.astype(np.float64)
    vals = cost.values.astype(np.float64)
    if alpha != 0.0:
        diff = prior[..., None, :] - offs[None, None, None, :, :]
        vals = vals + alpha * np.sum(diff * diff, axis=-1)
    best = np.argmin(vals, axis=-1)
    return offs[best]


def neighbor_mean(field: np.ndarray) -> np.ndarray:
    """6-neighbour average of a lattice vector field (existing neighbours only)."""
    acc = np.zeros_like(field, dtype=np.float64)
    count = np.zeros(field.shape[:3] + (1,), dtype=np.float64)
    for axis in range(3):
        if field.shape[axis] < 2:
            continue
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        acc[tuple(lo)] += field[tuple(hi)]
        acc[tuple(hi)] += field[tuple(lo)]
        count[tuple(lo)] += 1.0
        count[tuple(hi)] += 1.0
    np.maximum(count, 1.0, out=count)
    return acc / count


def coupled_convex(cost: CostVolume, iters: int, alphas) -> np.ndarray:
    """Alternating candidate selection and neighbourhood smoothing.

    Each iteration t selects, per control point, the candidate
    minimizing cost(p, v) + alphas[t] * |v - coupling(p)|^2 where the
    coupling field is the 6-neighbour mean of the current field (zero
    at t=0), then sets the field to the average of the selection and
    its own 6-neighbour mean. Returns float32 (Gx, Gy, Gz, 3) in voxel
    units.
    """
    alphas = [float(a) for a in np.atleast_1d(alphas)]
    if iters < 1 or len(alphas) != iters:
        raise InvariantViolation(f"need one alpha per iteration, got {len(alphas)} for T={iters}")
    if any(a < 0 for a in alphas) or any(b < a for a, b in zip(alphas, alphas[1:])):
        raise InvariantViolation("alphas must be nonnegative and non-decreasing")
    coupling = np.zeros(cost.grid.dims + (3,), dtype=np.float64)
    phi = coupling
    for t in range(iters):
        selected = select_displacements(cost, coupling, alphas[t])
        phi = 0.5 * (selected + neighbor_mean(selected))
        coupling = neighbor_mean(phi)
    return phi.astype(np.float32)


def upsample_field(field: np.ndarray, target_dims: tuple[int, int, int]) -> np.ndarray:
    """Corner-aligned trilinear upsampling of a lattice field to dense dims.

    Displacement values stay in full-resolution voxel units.
    """
    field = np.asarray(field)
    gdims = field.shape[:3]
    if any(t < g for t, g in zip(target_dims, gdims)):
        raise DimensionMismatch(f"target {target_dims} smaller than grid {gdims}")
    if tuple(target_dims) == tuple(gdims):
        return field.astype(np.float32)
    out = field
    for axis in range(3):
        coords = corner_aligned_coords(int(target_dims[axis]), gdims[axis])
        out = _interp_axis(out, coords, axis=axis)
    return out.astype(np.float32)
