"""Evaluation metrics and report emission.

Dice overlap per label, lesion volume-change error, Jacobian-determinant
field diagnostics, and deterministic CSV/JSON reports. Warped masks are
expected to come from nearest-neighbour warping so labels stay integral.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyMovingLesion,
    FieldTooSmall,
    InvariantViolation,
    IoFailure,
)
from .volume import FeatureVolume, LabelMask

CSV_COLUMNS = ("pair_id", "label", "dsc", "v_eps", "energy_init", "energy_final",
               "jac_min", "jac_fold_pct", "seconds")


def dice(a: LabelMask, b: LabelMask, label: int) -> float:
    """Dice overlap 2|A∩B| / (|A|+|B|) for one label value.

    Both-empty is defined as 1.0, exactly one empty as 0.0.
    """
    if a.dims != b.dims:
        raise DimensionMismatch(f"mask dims differ: {a.dims} vs {b.dims}")
    sel_a = a.data == label
    sel_b = b.data == label
    na = int(np.count_nonzero(sel_a))
    nb = int(np.count_nonzero(sel_b))
    if na == 0 and nb == 0:
        return 1.0
    if na == 0 or nb == 0:
        return 0.0
    inter = int(np.count_nonzero(sel_a & sel_b))
    return 2.0 * inter / (na + nb)


def lesion_volume_error(warped: LabelMask, moving: LabelMask,
                        label: int | None = None) -> float:
    """Absolute relative change of lesion voxel count after warping.

    |sum(warped) - sum(moving)| / sum(moving), counting voxels equal to
    `label` (or any nonzero voxel when label is None). Counts only;
    overlap is irrelevant.
    """
    if label is None:
        n_mov = int(np.count_nonzero(moving.data))
        n_warp = int(np.count_nonzero(warped.data))
    else:
        n_mov = int(np.count_nonzero(moving.data == label))
        n_warp = int(np.count_nonzero(warped.data == label))
    if n_mov == 0:
        raise EmptyMovingLesion("moving lesion mask has zero voxels")
    return abs(n_warp - n_mov) / n_mov


def jacobian_stats(field: np.ndarray) -> tuple[float, float]:
    """(min det, fraction det <= 0) of I + dphi/dx at interior voxels.

    Derivatives by central differences; fraction in [0, 1].
    """
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 4 or field.shape[3] != 3:
        raise DimensionMismatch(f"expected (X,Y,Z,3) field, got {field.shape}")
    if min(field.shape[:3]) < 3:
        raise FieldTooSmall(f"need >= 3 voxels per axis, got {field.shape[:3]}")
    inner = (slice(1, -1),) * 3
    jac = np.empty(field[inner].shape[:3] + (3, 3), dtype=np.float64)
    for comp in range(3):
        for axis in range(3):
            hi = [slice(1, -1)] * 3
            lo = [slice(1, -1)] * 3
            hi[axis] = slice(2, None)
            lo[axis] = slice(None, -2)
            jac[..., comp, axis] = 0.5 * (field[tuple(hi)][..., comp]
                                          - field[tuple(lo)][..., comp])
        jac[..., comp, comp] += 1.0
    a = jac
    det = (a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
           - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
           + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0]))
    return float(det.min()), float(np.count_nonzero(det <= 0) / det.size)


@dataclass
class RegistrationReport:
    """Per-pair evaluation record mirrored by the CSV/JSON writers."""

    pair_id: str
    label_dsc: list[tuple[str, float]] = field(default_factory=list)
    v_eps: float | None = None
    lesion_label: str | None = None
    energy_init: float = 0.0
    energy_final: float = 0.0
    jac_min: float = 1.0
    jac_fold_pct: float = 0.0
    seconds: float = 0.0
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, dsc_val in self.label_dsc:
            if not (0.0 <= dsc_val <= 1.0):
                raise InvariantViolation(f"DSC for '{name}' outside [0,1]: {dsc_val}")
        if self.v_eps is not None and self.v_eps < 0:
            raise InvariantViolation(f"V_eps must be >= 0, got {self.v_eps}")
        if not (0.0 <= self.jac_fold_pct <= 100.0):
            raise InvariantViolation(f"fold percentage outside [0,100]: {self.jac_fold_pct}")


def _csv_rows(report: RegistrationReport) -> list[list[str]]:
    shared = [f"{report.energy_init:.6e}", f"{report.energy_final:.6e}",
              f"{report.jac_min:.6f}", f"{report.jac_fold_pct:.4f}",
              f"{report.seconds:.3f}"]
    labels = report.label_dsc if report.label_dsc else [("", None)]
    rows = []
    for name, dsc_val in labels:
        v_eps = ""
        if report.v_eps is not None and name == report.lesion_label:
            v_eps = f"{report.v_eps:.4f}"
        dsc_cell = "" if dsc_val is None else f"{dsc_val:.4f}"
        rows.append([report.pair_id, name, dsc_cell, v_eps] + shared)
    return rows


def report_to_csv(report: RegistrationReport, header: bool = True) -> str:
    lines = [",".join(CSV_COLUMNS)] if header else []
    for row in _csv_rows(report):
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def report_to_json(report: RegistrationReport) -> str:
    payload = {
        "pair_id": report.pair_id,
        "labels": [
            {"label": name, "dsc": round(val, 6),
             "v_eps": (round(report.v_eps, 6)
                       if report.v_eps is not None and name == report.lesion_label
                       else None)}
            for name, val in report.label_dsc
        ],
        "energy_init": report.energy_init,
        "energy_final": report.energy_final,
        "jac_min": report.jac_min,
        "jac_fold_pct": report.jac_fold_pct,
        "seconds": report.seconds,
        "config": {str(k): str(v) for k, v in report.config.items()},
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def write_report(report: RegistrationReport, path, fmt: str = "csv") -> None:
    """Write a report with deterministic field order and formatting."""
    if fmt == "csv":
        text = report_to_csv(report)
    elif fmt == "json":
        text = report_to_json(report)
    else:
        raise InvariantViolation(f"unknown report format '{fmt}'")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def export_raw(obj: FeatureVolume | LabelMask | np.ndarray, out_base: str) -> tuple[str, str]:
    """Dump a volume/mask/field as <base>.raw plus a <base>.txt sidecar.

    The blob is headerless little-endian in [Z][Y][X][C] order; the
    sidecar records dims, dtype and spacing for external tools.
    """
    if isinstance(obj, LabelMask):
        arr = obj.data[..., None]
        dtype = "u8"
        spacing = obj.spacing
    elif isinstance(obj, FeatureVolume):
        arr = obj.data
        dtype = "f32"
        spacing = obj.spacing
    else:
        arr = np.asarray(obj, dtype=np.float32)
        if arr.ndim == 3:
            arr = arr[..., None]
        dtype = "f32"
        spacing = (1.0, 1.0, 1.0)
    raw_path = f"{out_base}.raw"
    txt_path = f"{out_base}.txt"
    payload = np.ascontiguousarray(arr.transpose(2, 1, 0, 3))
    if dtype == "f32":
        payload = payload.astype("<f4")
    try:
        with open(raw_path, "wb") as fh:
            fh.write(payload.tobytes())
        with open(txt_path, "w", encoding="utf-8") as fh:
            fh.write(f"dims: {arr.shape[0]} {arr.shape[1]} {arr.shape[2]}\n")
            fh.write(f"channels: {arr.shape[3]}\n")
            fh.write(f"dtype: {dtype}\n")
            fh.write(f"spacing: {spacing[0]} {spacing[1]} {spacing[2]}\n")
            fh.write("order: zyxc little-endian\n")
    except OSError as exc:
        raise IoFailure(f"cannot export to {out_base}: {exc}") from exc
    return raw_path, txt_path
