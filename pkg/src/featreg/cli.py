"""Command line front-end.

Subcommands: register, evaluate, sweep, synth, export.
Exit codes: 0 ok, 1 numeric failure (NaN), 2 usage/config/IO errors.
FEATREG_THREADS caps internal worker counts; FEATREG_KERNELS selects
the compiled or numpy kernel backend.
"""

from __future__ import annotations

import argparse
import resource
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path


from . import __version__, metrics, synth
from .config import PipelineConfig, build_config
from .errors import FeatRegError, NumericFailure
from .metrics import CSV_COLUMNS, RegistrationReport, export_raw
from .pipeline import run_register
from .volume import read_fvol, write_fvol


def _peak_mb() -> float:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0


def _add_register_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--fixed", help="fixed FVOL (features, stack or raw)")
    p.add_argument("--moving", help="moving FVOL")
    p.add_argument("--fixed-mask", dest="fixed_mask")
    p.add_argument("--moving-mask", dest="moving_mask")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--pair-id", dest="pair_id")
    p.add_argument("--d", help="PCA dimension for slice-stack inputs")
    p.add_argument("--skip-pca", dest="skip_pca", action="store_const", const="true")
    p.add_argument("--lam", help="regularization weight lambda")
    p.add_argument("--stage1-grid", dest="stage1_grid")
    p.add_argument("--stage1-radius", dest="stage1_radius")
    p.add_argument("--stage1-step", dest="stage1_step")
    p.add_argument("--stage1-iters", dest="stage1_iters")
    p.add_argument("--stage1-alpha", dest="stage1_alpha",
                   help="comma list of coupling multipliers, one per iteration")
    p.add_argument("--stage2-spacing", dest="stage2_spacing")
    p.add_argument("--adam-lr", dest="adam_lr")
    p.add_argument("--adam-iters", dest="adam_iters")
    p.add_argument("--seed")
    p.add_argument("--lesion-label", dest="lesion_label")
    p.add_argument("--dump-stage1", dest="dump_stage1", action="store_const", const="true")
    p.add_argument("--timing", choices=("wall", "zero"))
    p.add_argument("--preprocess", action="store_const", const="true")
    p.add_argument("--target-spacing", dest="target_spacing")
    p.add_argument("--pad-size", dest="pad_size")


_CONFIG_KEYS = (
    "fixed", "moving", "fixed_mask", "moving_mask", "out_dir", "pair_id", "d",
    "skip_pca", "lam", "stage1_grid", "stage1_radius", "stage1_step",
    "stage1_iters", "stage1_alpha", "stage2_spacing", "adam_lr", "adam_iters",
    "seed", "lesion_label", "dump_stage1", "timing", "preprocess",
    "target_spacing", "pad_size",
)


def _config_from_args(args) -> PipelineConfig:
    overrides = {key: getattr(args, key, None) for key in _CONFIG_KEYS}
    return build_config(args.config, overrides)


def cmd_register(args) -> int:
    cfg = _config_from_args(args)
    result = run_register(cfg)
    rep = result.report
    print(f"pair {rep.pair_id}: energy {rep.energy_init:.6g} -> {rep.energy_final:.6g}")
    for name, val in rep.label_dsc:
        print(f"  dsc {name}: {val:.4f}")
    if rep.v_eps is not None:
        print(f"  v_eps: {rep.v_eps:.4f}")
    print(f"  artifacts in {cfg.out_dir}")
    return 0


def _sweep_one(cfg) -> dict:
    result = run_register(cfg)
    return {"report": result.report, "peak_mb": _peak_mb()}


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    d_values = [int(v) for v in args.d_values.split(",") if v.strip()]
    if not d_values:
        raise FeatRegError("sweep needs at least one d value")
    jobs = max(1, int(args.jobs))
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = [replace(cfg, d=d, out_dir=str(out_dir / f"d_{d:03d}")) for d in d_values]
    rows = []
    worst = 0
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = list(pool.map(_sweep_try, runs))
        outcomes = futures
    else:
        outcomes = [_sweep_try(run) for run in runs]
    for d, outcome in zip(d_values, outcomes):
        if "error" in outcome:
            print(f"d={d}: FAILED: {outcome['error']}", file=sys.stderr)
            worst = max(worst, outcome["code"])
            continue
        rep: RegistrationReport = outcome["report"]
        for line in metrics.report_to_csv(rep, header=False).strip().splitlines():
            rows.append(f"{d},{line},{outcome['peak_mb']:.1f}")
    header = "d," + ",".join(CSV_COLUMNS) + ",peak_mb"
    (out_dir / "sweep.csv").write_text(header + "\n" + "\n".join(rows) + "\n",
                                       encoding="utf-8")
    print(f"sweep: {len(rows)} rows -> {out_dir / 'sweep.csv'}")
    return worst


def _sweep_try(cfg) -> dict:
    try:
        return _sweep_one(cfg)
    except NumericFailure as exc:
        return {"error": str(exc), "code": 1}
    except FeatRegError as exc:
        return {"error": str(exc), "code": 2}


def cmd_evaluate(args) -> int:
    fixed_mask = read_fvol(args.fixed_mask)
    warped_mask = read_fvol(args.warped_mask)
    label_dsc = []
    for label in sorted(set(fixed_mask.labels()) | set(warped_mask.labels())):
        label_dsc.append((f"label_{label}", metrics.dice(fixed_mask, warped_mask, label)))
    v_eps = None
    lesion_name = None
    lesion_label = int(args.lesion_label)
    if args.moving_mask and lesion_label > 0:
        moving_mask = read_fvol(args.moving_mask)
        lesion_name = f"label_{lesion_label}"
        v_eps = metrics.lesion_volume_error(warped_mask, moving_mask, label=lesion_label)
    jac_min, fold_frac = 1.0, 0.0
    if args.field:
        field_vol = read_fvol(args.field)
        jac_min, fold_frac = metrics.jacobian_stats(field_vol.data)
    report = RegistrationReport(
        pair_id=args.pair_id, label_dsc=label_dsc, v_eps=v_eps,
        lesion_label=lesion_name, jac_min=jac_min, jac_fold_pct=100.0 * fold_frac)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics.write_report(report, out_dir / "report.csv", fmt="csv")
    metrics.write_report(report, out_dir / "report.json", fmt="json")
    for name, val in label_dsc:
        print(f"dsc {name}: {val:.4f}")
    if v_eps is not None:
        print(f"v_eps: {v_eps:.4f}")
    return 0


def cmd_synth(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    size = int(args.size)
    seed = int(args.seed)
    max_disp = float(args.max_disp)
    if max_disp > 0:
        fixed, moving, fixed_mask, moving_mask, gt = synth.make_pair(size, seed, max_disp)
        from .volume import FeatureVolume
        write_fvol(FeatureVolume(gt, meta={"warp_convention": "pullback",
                                           "ground_truth": "true"}),
                   out_dir / "gt_field.fvol")
    else:
        moving = synth.make_phantom(size, seed)
        moving_mask = synth.make_masks(size, seed)
        fixed, fixed_mask = moving, moving_mask
    write_fvol(fixed, out_dir / "fixed.fvol")
    write_fvol(moving, out_dir / "moving.fvol")
    write_fvol(fixed_mask, out_dir / "fixed_mask.fvol")
    write_fvol(moving_mask, out_dir / "moving_mask.fvol")
    print(f"synthetic pair (size={size}, seed={seed}, max_disp={max_disp}) -> {out_dir}")
    return 0


def cmd_export(args) -> int:
    vol = read_fvol(args.infile)
    raw, sidecar = export_raw(vol, args.out)
    print(f"wrote {raw} + {sidecar}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="featreg",
        description="Training-free deformable registration of feature volumes")
    parser.add_argument("--version", action="version", version=f"featreg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_reg = sub.add_parser("register", help="run the two-stage registration pipeline")
    _add_register_flags(p_reg)
    p_reg.set_defaults(func=cmd_register)

    p_sweep = sub.add_parser("sweep", help="re-run registration over a list of PCA dims")
    _add_register_flags(p_sweep)
    p_sweep.add_argument("--d-values", dest="d_values", required=True,
                         help="comma list of PCA dimensions")
    p_sweep.add_argument("--jobs", default="1", help="parallel sweep processes")
    p_sweep.set_defaults(func=cmd_sweep)

    p_eval = sub.add_parser("evaluate", help="metrics-only run on existing masks")
    p_eval.add_argument("--fixed-mask", dest="fixed_mask", required=True)
    p_eval.add_argument("--warped-mask", dest="warped_mask", required=True)
    p_eval.add_argument("--moving-mask", dest="moving_mask",
                        help="moving lesion reference for V_eps")
    p_eval.add_argument("--field", help="optional dense field FVOL for Jacobian stats")
    p_eval.add_argument("--lesion-label", dest="lesion_label", default="0")
    p_eval.add_argument("--pair-id", dest="pair_id", default="eval")
    p_eval.add_argument("--out-dir", dest="out_dir", default="out")
    p_eval.set_defaults(func=cmd_evaluate)

    p_synth = sub.add_parser("synth", help="generate a seeded synthetic pair")
    p_synth.add_argument("--out-dir", dest="out_dir", required=True)
    p_synth.add_argument("--size", default="48")
    p_synth.add_argument("--seed", default="0")
    p_synth.add_argument("--max-disp", dest="max_disp", default="6.0",
                         help="max ground-truth displacement (0 = identical pair)")
    p_synth.set_defaults(func=cmd_synth)

    p_exp = sub.add_parser("export", help="dump an FVOL as raw blob + text sidecar")
    p_exp.add_argument("--in", dest="infile", required=True)
    p_exp.add_argument("--out", required=True, help="output base path (no extension)")
    p_exp.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericFailure as exc:
        print(f"featreg: numeric failure: {exc}", file=sys.stderr)
        return 1
    except FeatRegError as exc:
        print(f"featreg: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
