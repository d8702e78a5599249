"""Discrete cost volumes and the coupled convex solve."""

import numpy as np
import pytest

from featreg.discrete import (
    CandidateSet,
    ControlGrid,
    CostVolume,
    build_cost_volume,
    coupled_convex,
    neighbor_mean,
    select_displacements,
    upsample_field,
)
from featreg.errors import DimensionMismatch, InvariantViolation
from featreg.volume import FeatureVolume


def ssd_oracle(ref, mov, g, offsets):
    """Naive triple-loop SSD cost volume (clamped, block-normalized)."""
    nx, ny, nz, nc = ref.shape
    gx, gy, gz = (-(-nx // g), -(-ny // g), -(-nz // g))
    out = np.zeros((gx, gy, gz, len(offsets)))
    counts = np.zeros((gx, gy, gz))
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                counts[x // g, y // g, z // g] += 1
    for l, (ox, oy, oz) in enumerate(offsets):
        for x in range(nx):
            sx = min(max(x + ox, 0), nx - 1)
            for y in range(ny):
                sy = min(max(y + oy, 0), ny - 1)
                for z in range(nz):
                    sz = min(max(z + oz, 0), nz - 1)
                    ssd = 0.0
                    for c in range(nc):
                        d = float(ref[x, y, z, c]) - float(mov[sx, sy, sz, c])
                        ssd += d * d
                    out[x // g, y // g, z // g, l] += ssd
    return out / counts[..., None]


def argmin_oracle(values, offsets):
    """Exhaustive per-point argmin with norm-then-lexicographic ties."""
    gx, gy, gz, L = values.shape
    out = np.zeros((gx, gy, gz, 3))
    for i in range(gx):
        for j in range(gy):
            for k in range(gz):
                best = None
                for l in range(L):
                    v = offsets[l]
                    key = (float(values[i, j, k, l]),
                           int(v[0] ** 2 + v[1] ** 2 + v[2] ** 2),
                           int(v[0]), int(v[1]), int(v[2]))
                    if best is None or key < best[0]:
                        best = (key, v)
                out[i, j, k] = best[1]
    return out


class TestCandidateSet:
    def test_count_and_zero_first(self):
        cands = CandidateSet.build(6, 2)
        assert len(cands) == 7 ** 3
        assert np.array_equal(cands.offsets[0], [0, 0, 0])

    def test_all_multiples_within_radius(self):
        cands = CandidateSet.build(4, 2)
        assert np.all(np.abs(cands.offsets) <= 4)
        assert np.all(cands.offsets % 2 == 0)

    def test_norm_then_lex_order(self):
        cands = CandidateSet.build(2, 1)
        norms = (cands.offsets ** 2).sum(axis=1)
        assert np.all(np.diff(norms) >= 0)
        # within equal norms, lexicographic
        for n in np.unique(norms):
            block = cands.offsets[norms == n]
            keys = [tuple(row) for row in block]
            assert keys == sorted(keys)

    def test_indivisible_radius_rejected(self):
        with pytest.raises(InvariantViolation):
            CandidateSet.build(5, 2)


class TestBuildCostVolume:
    def test_identical_inputs_zero_at_zero(self, rng):
        vol = FeatureVolume(rng.standard_normal((8, 8, 8, 2)).astype(np.float32))
        grid = ControlGrid.for_volume(vol.dims, 4)
        cands = CandidateSet.build(2, 1)
        cost = build_cost_volume(vol, vol, grid, cands)
        assert np.all(cost.values[..., 0] == 0.0)
        assert np.all(cost.values.min(axis=-1) == 0.0)

    def test_circular_shift_zero_at_shift(self, rng):
        data = rng.standard_normal((12, 12, 12, 1)).astype(np.float32)
        shift = (2, -1, 1)
        moved = np.roll(data, shift, axis=(0, 1, 2))
        f_ref = FeatureVolume(data)
        f_mov = FeatureVolume(moved)
        grid = ControlGrid.for_volume(f_ref.dims, 4)
        cands = CandidateSet.build(2, 1)
        cost = build_cost_volume(f_ref, f_mov, grid, cands)
        l_star = np.where((cands.offsets == shift).all(axis=1))[0][0]
        # interior block (blocks at least r + |shift| from edges)
        assert cost.values[1, 1, 1, l_star] == pytest.approx(0.0, abs=1e-6)

    def test_matches_naive_oracle(self, rng):
        ref = FeatureVolume(rng.standard_normal((16, 16, 16, 2)).astype(np.float32))
        mov = FeatureVolume(rng.standard_normal((16, 16, 16, 2)).astype(np.float32))
        grid = ControlGrid.for_volume(ref.dims, 4)
        cands = CandidateSet.build(2, 1)
        cost = build_cost_volume(ref, mov, grid, cands)
        want = ssd_oracle(ref.data, mov.data, 4, cands.offsets)
        assert cost.values.shape == want.shape
        np.testing.assert_allclose(cost.values, want, atol=1e-5)

    def test_partial_edge_blocks_normalized(self, rng):
        ref = FeatureVolume(np.ones((5, 4, 4, 1), dtype=np.float32))
        mov = FeatureVolume(np.zeros((5, 4, 4, 1), dtype=np.float32))
        grid = ControlGrid.for_volume(ref.dims, 4)
        cands = CandidateSet.build(0, 1)
        cost = build_cost_volume(ref, mov, grid, cands)
        # every voxel differs by 1 -> normalized cost 1 in full and partial blocks
        np.testing.assert_allclose(cost.values, 1.0, atol=1e-6)

    def test_dimension_mismatch(self, rng):
        a = FeatureVolume(np.zeros((4, 4, 4, 1), dtype=np.float32))
        b = FeatureVolume(np.zeros((4, 4, 5, 1), dtype=np.float32))
        with pytest.raises(DimensionMismatch):
            build_cost_volume(a, b, ControlGrid.for_volume(a.dims, 2),
                              CandidateSet.build(1, 1))


def make_cost(rng, gdims=(3, 3, 3), r=1, q=1, values=None):
    cands = CandidateSet.build(r, q)
    grid = ControlGrid.for_volume(tuple(4 * d for d in gdims), 4)
    if values is None:
        values = rng.uniform(0.0, 10.0, gdims + (len(cands),)).astype(np.float32)
    return CostVolume(grid=grid, candidates=cands, values=values)


class TestCoupledConvex:
    def test_zero_cost_gives_zero_field(self, rng):
        cost = make_cost(rng, values=np.zeros((3, 3, 3, 27), dtype=np.float32))
        phi = coupled_convex(cost, 3, (2.0, 6.0, 20.0))
        assert np.all(phi == 0.0)

    def test_unique_zero_translation_fixed_point(self, rng):
        cands = CandidateSet.build(2, 1)
        l_star = np.where((cands.offsets == (1, -2, 0)).all(axis=1))[0][0]
        values = np.full((4, 4, 4, len(cands)), 1e4, dtype=np.float32)
        values[..., l_star] = 0.0
        cost = make_cost(rng, gdims=(4, 4, 4), r=2, values=values)
        for iters, alphas in ((1, (2.0,)), (2, (2.0, 6.0)), (3, (2.0, 6.0, 20.0))):
            phi = coupled_convex(cost, iters, alphas)
            assert np.all(phi == np.array([1.0, -2.0, 0.0], dtype=np.float32))

    def test_argmin_step_matches_exhaustive_oracle(self, rng):
        cost = make_cost(rng)
        prior = np.zeros((3, 3, 3, 3))
        got = select_displacements(cost, prior, 0.0)
        want = argmin_oracle(cost.values, cost.candidates.offsets)
        assert np.array_equal(got, want)

    def test_argmin_with_coupling_matches_oracle(self, rng):
        cost = make_cost(rng)
        prior = rng.uniform(-1, 1, (3, 3, 3, 3))
        alpha = 2.5
        offs = cost.candidates.offsets.astype(np.float64)
        penalized = cost.values.astype(np.float64) + alpha * np.sum(
            (prior[..., None, :] - offs[None, None, None]) ** 2, axis=-1)
        got = select_displacements(cost, prior, alpha)
        want = argmin_oracle(penalized, cost.candidates.offsets)
        assert np.array_equal(got, want)

    def test_output_within_candidate_hull(self, rng):
        cost = make_cost(rng, r=2)
        phi = coupled_convex(cost, 3, (2.0, 6.0, 20.0))
        assert np.all(np.abs(phi) <= 2.0 + 1e-6)

    def test_smoothing_reduces_total_variation(self, rng):
        for seed in range(5):
            local = np.random.default_rng(seed)
            cost = make_cost(local, gdims=(4, 4, 4), r=2)
            pure = select_displacements(cost, np.zeros((4, 4, 4, 3)), 0.0)
            smoothed = coupled_convex(cost, 3, (2.0, 6.0, 20.0)).astype(np.float64)

            def tv(field):
                return float(np.sum((field - neighbor_mean(field)) ** 2))

            assert tv(smoothed) <= tv(pure) + 1e-9

    def test_translation_equivariance(self, rng):
        data = rng.standard_normal((16, 16, 16, 1)).astype(np.float32) * 30.0
        shift = (2, 0, -2)
        f_ref = FeatureVolume(data)
        f_mov = FeatureVolume(np.roll(data, shift, axis=(0, 1, 2)))
        grid = ControlGrid.for_volume(f_ref.dims, 4)
        cands = CandidateSet.build(2, 1)
        cost = build_cost_volume(f_ref, f_mov, grid, cands)
        phi = coupled_convex(cost, 3, (2.0, 6.0, 20.0))
        interior = phi[1:-1, 1:-1, 1:-1].reshape(-1, 3)
        vals, counts = np.unique(interior, axis=0, return_counts=True)
        assert np.array_equal(vals[counts.argmax()], np.array(shift, dtype=np.float32))

    def test_alpha_schedule_validated(self, rng):
        cost = make_cost(rng)
        with pytest.raises(InvariantViolation):
            coupled_convex(cost, 2, (3.0, 1.0))  # decreasing
        with pytest.raises(InvariantViolation):
            coupled_convex(cost, 2, (1.0,))  # wrong length


class TestUpsampleField:
    def test_constant(self):
        field = np.tile(np.array([1.5, -2.0, 0.25], dtype=np.float32), (3, 3, 3, 1))
        dense = upsample_field(field, (10, 9, 8))
        assert dense.shape == (10, 9, 8, 3)
        expected = np.broadcast_to(field[0, 0, 0], dense.shape)
        np.testing.assert_allclose(dense, expected, atol=1e-6)

    def test_identity_when_dims_match(self, rng):
        field = rng.standard_normal((4, 4, 4, 3)).astype(np.float32)
        dense = upsample_field(field, (4, 4, 4))
        assert np.array_equal(dense, field)

    def test_linear_field_exact(self):
        g = 4
        idx = np.arange(g, dtype=np.float32)
        field = np.zeros((g, g, g, 3), dtype=np.float32)
        field[..., 0] = idx[:, None, None] * 2.0
        dense = upsample_field(field, (2 * g - 1, g, g))
        expected = np.arange(2 * g - 1, dtype=np.float64)
        np.testing.assert_allclose(dense[:, 0, 0, 0], expected, atol=1e-6)

    def test_rejects_smaller_target(self, rng):
        field = rng.standard_normal((4, 4, 4, 3)).astype(np.float32)
        with pytest.raises(DimensionMismatch):
            upsample_field(field, (3, 4, 4))
