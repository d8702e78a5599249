"""End-to-end registration runs: feature prep, two-stage optimization,
warping, metrics and artifact emission.

Inputs are FVOL files. Slice-stack volumes (patch_grid + k metadata) go
through interpolate -> joint PCA -> upsample; dense volumes (raw
intensity or precomputed features) feed the optimizer directly. The
optimizer path is identical in both modes.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import discrete, features, metrics, refine
from .config import PipelineConfig
from .errors import DimensionMismatch, FeatRegError, FieldTooSmall, NumericFailure
from .metrics import RegistrationReport
from .volume import FeatureVolume, LabelMask, pad_to_cube, read_fvol, resample_isotropic, write_fvol


@dataclass
class RegistrationResult:
    report: RegistrationReport
    field: np.ndarray
    artifacts: dict


# reduced dimensions each encoder plateaus at; capped by the token dim
ENCODER_D_DEFAULTS = {
    "sam": 16, "medsam": 10, "sslsam": 16, "dinov2": 10, "medclipsam": 16,
}


def resolve_d(cfg_d: int, encoder: str | None, token_dim: int) -> int:
    """Explicit d wins; d=0 falls back to the encoder's default, capped at D."""
    if cfg_d > 0:
        return cfg_d
    return min(ENCODER_D_DEFAULTS.get(encoder or "", 16), token_dim)


def _is_stack(vol: FeatureVolume) -> bool:
    return vol.patch_grid is not None and "k" in vol.meta and "z_total" in vol.meta


def _source_dims(vol: FeatureVolume) -> tuple[int, int, int]:
    raw = vol.meta.get("source_dims")
    if not raw:
        raise DimensionMismatch("stack volume lacks source_dims metadata")
    dims = tuple(int(v) for v in raw.split(","))
    if len(dims) != 3:
        raise DimensionMismatch(f"bad source_dims '{raw}'")
    return dims


def _prepare_features(fixed: FeatureVolume, moving: FeatureVolume,
                      cfg: PipelineConfig):
    """Stack inputs: interpolate, joint PCA (unless skipped), upsample."""
    ref_stack = features.stack_from_volume(fixed)
    mov_stack = features.stack_from_volume(moving)
    ref_dense = features.interpolate_skipped_slices(ref_stack)
    mov_dense = features.interpolate_skipped_slices(mov_stack)
    pca_record = None
    if not cfg.skip_pca:
        d = resolve_d(cfg.d, fixed.encoder, ref_stack.token_dim)
        proj = features.fit_joint_pca(ref_stack, mov_stack, d)
        ref_dense = features.apply_pca(ref_dense, proj)
        mov_dense = features.apply_pca(mov_dense, proj)
        pca_record = proj.record()
    dims = _source_dims(fixed)
    f_ref = features.upsample_to_volume(ref_dense, dims[:2], fixed.spacing,
                                        meta=fixed.meta, pca=pca_record)
    f_mov = features.upsample_to_volume(mov_dense, dims[:2], moving.spacing,
                                        meta=moving.meta, pca=pca_record)
    return f_ref, f_mov


def _preprocess_dense(vol, cfg: PipelineConfig):
    out = resample_isotropic(vol, cfg.target_spacing)
    return pad_to_cube(out, cfg.pad_size)


def run_register(cfg: PipelineConfig) -> RegistrationResult:
    """Execute one registration pair end to end and write artifacts.

    Raises FeatRegError subclasses for config/file problems and
    NumericFailure when NaN/Inf appears in the optimized field.
    """
    t0 = time.perf_counter()
    for name in ("fixed", "moving"):
        path = getattr(cfg, name)
        if not path or not os.path.exists(path):
            raise FeatRegError(f"{name} input missing: '{path}'")
    for name in ("fixed_mask", "moving_mask"):
        path = getattr(cfg, name)
        if path and not os.path.exists(path):
            raise FeatRegError(f"{name} input missing: '{path}'")

    fixed = read_fvol(cfg.fixed)
    moving = read_fvol(cfg.moving)
    if not isinstance(fixed, FeatureVolume) or not isinstance(moving, FeatureVolume):
        raise FeatRegError("fixed/moving inputs must be f32 feature volumes")

    if _is_stack(fixed) != _is_stack(moving):
        raise DimensionMismatch("cannot mix slice-stack and dense inputs")
    if _is_stack(fixed):
        f_ref, f_mov = _prepare_features(fixed, moving, cfg)
    else:
        f_ref, f_mov = fixed, moving
        if cfg.preprocess:
            f_ref = _preprocess_dense(f_ref, cfg)
            f_mov = _preprocess_dense(f_mov, cfg)
    if f_ref.dims != f_mov.dims or f_ref.channels != f_mov.channels:
        raise DimensionMismatch(
            f"prepared volumes disagree: {f_ref.dims}x{f_ref.channels} "
            f"vs {f_mov.dims}x{f_mov.channels}")

    fixed_mask = read_fvol(cfg.fixed_mask) if cfg.fixed_mask else None
    moving_mask = read_fvol(cfg.moving_mask) if cfg.moving_mask else None
    if cfg.preprocess and not _is_stack(fixed):
        fixed_mask = _preprocess_dense(fixed_mask, cfg) if fixed_mask is not None else None
        moving_mask = _preprocess_dense(moving_mask, cfg) if moving_mask is not None else None
    for mask, name in ((fixed_mask, "fixed_mask"), (moving_mask, "moving_mask")):
        if mask is not None:
            if not isinstance(mask, LabelMask):
                raise FeatRegError(f"{name} must be a u8 label mask")
            if mask.dims != f_ref.dims:
                raise DimensionMismatch(
                    f"{name} dims {mask.dims} != volume dims {f_ref.dims}")

    # stage 1: discrete global alignment
    grid = discrete.ControlGrid.for_volume(f_ref.dims, cfg.stage1_grid)
    cands = discrete.CandidateSet.build(cfg.stage1_radius, cfg.stage1_step)
    cost = discrete.build_cost_volume(f_ref, f_mov, grid, cands)
    lattice_field = discrete.coupled_convex(cost, cfg.stage1_iters, cfg.alphas)
    init_field = discrete.upsample_field(lattice_field, f_ref.dims)

    # stage 2: continuous instance refinement
    energy_cfg = refine.EnergyConfig(lam=cfg.lam, control_spacing=cfg.stage2_spacing)
    adam = refine.AdamParams(lr=cfg.adam_lr, iters=cfg.adam_iters,
                             beta1=cfg.adam_beta1, beta2=cfg.adam_beta2,
                             eps=cfg.adam_eps)
    field = refine.adam_refine(f_ref, f_mov, init_field, energy_cfg, adam)
    if not np.all(np.isfinite(field)):
        raise NumericFailure("NaN/Inf in optimized displacement field")

    zero = np.zeros_like(field)
    energy_init = refine.energy(f_ref, f_mov, zero, energy_cfg)
    energy_final = refine.energy(f_ref, f_mov, field, energy_cfg)
    warped = refine.warp(f_mov, field)

    label_dsc = []
    v_eps = None
    lesion_name = None
    warped_mask = None
    if fixed_mask is not None and moving_mask is not None:
        warped_mask = refine.warp(moving_mask, field)
        for label in sorted(set(fixed_mask.labels()) | set(moving_mask.labels())):
            label_dsc.append((f"label_{label}",
                              metrics.dice(fixed_mask, warped_mask, label)))
        if cfg.lesion_label > 0:
            lesion_name = f"label_{cfg.lesion_label}"
            v_eps = metrics.lesion_volume_error(warped_mask, moving_mask,
                                                label=cfg.lesion_label)
    try:
        jac_min, fold_frac = metrics.jacobian_stats(field)
    except FieldTooSmall:
        jac_min, fold_frac = 1.0, 0.0

    seconds = 0.0 if cfg.timing == "zero" else time.perf_counter() - t0
    pair_id = cfg.pair_id or f"{Path(cfg.fixed).stem}__{Path(cfg.moving).stem}"
    config_echo = cfg.echo()
    if isinstance(f_ref.pca, dict) and "d" in f_ref.pca:
        config_echo["d_effective"] = str(f_ref.pca["d"])
    report = RegistrationReport(
        pair_id=pair_id,
        label_dsc=label_dsc,
        v_eps=v_eps,
        lesion_label=lesion_name,
        energy_init=energy_init,
        energy_final=energy_final,
        jac_min=jac_min,
        jac_fold_pct=100.0 * fold_frac,
        seconds=round(seconds, 3),
        config=config_echo,
    )

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = {}
    phi_vol = FeatureVolume(field, f_ref.spacing,
                            meta={"warp_convention": "pullback"})
    write_fvol(phi_vol, out_dir / "phi.fvol")
    artifacts["phi"] = str(out_dir / "phi.fvol")
    write_fvol(warped, out_dir / "warped.fvol")
    artifacts["warped"] = str(out_dir / "warped.fvol")
    if warped_mask is not None:
        write_fvol(warped_mask, out_dir / "warped_mask.fvol")
        artifacts["warped_mask"] = str(out_dir / "warped_mask.fvol")
    if cfg.dump_stage1:
        stage1_vol = FeatureVolume(init_field, f_ref.spacing,
                                   meta={"warp_convention": "pullback",
                                         "stage": "coupled-convex"})
        write_fvol(stage1_vol, out_dir / "stage1_field.fvol")
        artifacts["stage1_field"] = str(out_dir / "stage1_field.fvol")
    metrics.write_report(report, out_dir / "report.csv", fmt="csv")
    metrics.write_report(report, out_dir / "report.json", fmt="json")
    artifacts["report_csv"] = str(out_dir / "report.csv")
    artifacts["report_json"] = str(out_dir / "report.json")
    return RegistrationResult(report=report, field=field, artifacts=artifacts)
