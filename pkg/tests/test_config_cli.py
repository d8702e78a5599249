"""Config parsing and the command-line pipeline surface."""

import numpy as np
import pytest

from featreg.cli import main
from featreg.config import PipelineConfig, build_config, parse_config_file
from featreg.errors import InvariantViolation
from featreg.features import stack_to_volume, SliceFeatureStack
from featreg.volume import FeatureVolume, LabelMask, read_fvol, write_fvol


class TestConfig:
    def test_defaults_echo(self):
        cfg = PipelineConfig()
        echo = cfg.echo()
        assert echo["lam"] == "2.0"
        assert echo["stage1_alpha"] == "1.0,3.0,10.0"
        assert echo["skip_pca"] == "false"
        assert echo["pad_size"] == "512"

    def test_file_parse_and_override(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text(
            "# comment line\n"
            "lam = 4.0\n"
            "stage1_radius = 4\n"
            "skip_pca = true\n"
            "stage1_alpha = 1,2,8  # trailing comment\n")
        cfg = build_config(cfg_file, {"lam": "8.0"})
        assert cfg.lam == 8.0  # flag wins over file
        assert cfg.stage1_radius == 4
        assert cfg.skip_pca is True
        assert cfg.stage1_alpha == (1.0, 2.0, 8.0)

    def test_unknown_key_rejected(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("frobnicate = 1\n")
        with pytest.raises(InvariantViolation):
            parse_config_file(cfg_file)

    def test_alpha_length_must_match_iters(self):
        with pytest.raises(InvariantViolation):
            PipelineConfig(stage1_iters=2, stage1_alpha=(1.0, 2.0, 3.0))

    def test_effective_alphas_scaled_by_lambda(self):
        cfg = PipelineConfig(lam=2.0)
        assert cfg.alphas == (2.0, 6.0, 20.0)


@pytest.fixture(scope="module")
def synth_pair(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthpair")
    code = main(["synth", "--out-dir", str(out), "--size", "24",
                 "--seed", "5", "--max-disp", "3"])
    assert code == 0
    return out


class TestCli:
    def test_register_self_is_clean(self, tmp_path, synth_pair):
        out = tmp_path / "self"
        code = main([
            "register",
            "--fixed", str(synth_pair / "fixed.fvol"),
            "--moving", str(synth_pair / "fixed.fvol"),
            "--fixed-mask", str(synth_pair / "fixed_mask.fvol"),
            "--moving-mask", str(synth_pair / "fixed_mask.fvol"),
            "--out-dir", str(out), "--stage1-radius", "2",
            "--adam-iters", "10", "--timing", "zero",
        ])
        assert code == 0
        report = (out / "report.csv").read_text().splitlines()
        assert report[1].split(",")[2] == "1.0000"
        phi = read_fvol(out / "phi.fvol")
        assert float(np.abs(phi.data).max()) < 0.1

    def test_register_reduces_mse(self, tmp_path, synth_pair):
        out = tmp_path / "reg"
        code = main([
            "register",
            "--fixed", str(synth_pair / "fixed.fvol"),
            "--moving", str(synth_pair / "moving.fvol"),
            "--out-dir", str(out), "--stage1-radius", "4",
            "--timing", "zero",
        ])
        assert code == 0
        fixed = read_fvol(synth_pair / "fixed.fvol").data.astype(np.float64)
        moving = read_fvol(synth_pair / "moving.fvol").data.astype(np.float64)
        warped = read_fvol(out / "warped.fvol").data.astype(np.float64)
        assert ((fixed - warped) ** 2).mean() <= 0.2 * ((fixed - moving) ** 2).mean()

    def test_missing_input_exits_2_no_partial_outputs(self, tmp_path):
        out = tmp_path / "nothing"
        code = main(["register", "--fixed", str(tmp_path / "absent.fvol"),
                     "--moving", str(tmp_path / "absent.fvol"),
                     "--out-dir", str(out)])
        assert code == 2
        assert not out.exists()

    def test_dump_stage1_flag(self, tmp_path, synth_pair):
        out = tmp_path / "dump"
        code = main([
            "register",
            "--fixed", str(synth_pair / "fixed.fvol"),
            "--moving", str(synth_pair / "moving.fvol"),
            "--out-dir", str(out), "--stage1-radius", "2",
            "--adam-iters", "5", "--dump-stage1", "--timing", "zero",
        ])
        assert code == 0
        dump = read_fvol(out / "stage1_field.fvol")
        assert dump.channels == 3

    def test_evaluate_identity(self, tmp_path, synth_pair):
        out = tmp_path / "eval"
        code = main(["evaluate",
                     "--fixed-mask", str(synth_pair / "fixed_mask.fvol"),
                     "--warped-mask", str(synth_pair / "fixed_mask.fvol"),
                     "--out-dir", str(out)])
        assert code == 0
        rows = (out / "report.csv").read_text().splitlines()[1:]
        assert all(row.split(",")[2] == "1.0000" for row in rows)

    def test_evaluate_lesion_counts(self, tmp_path):
        moving = LabelMask(np.zeros((5, 5, 5), dtype=np.uint8))
        moving.data.reshape(-1)[:100] = 2
        warped = LabelMask(np.zeros((5, 5, 5), dtype=np.uint8))
        warped.data.reshape(-1)[:75] = 2
        write_fvol(moving, tmp_path / "mov.fvol")
        write_fvol(warped, tmp_path / "warp.fvol")
        out = tmp_path / "eval"
        code = main(["evaluate",
                     "--fixed-mask", str(tmp_path / "warp.fvol"),
                     "--warped-mask", str(tmp_path / "warp.fvol"),
                     "--moving-mask", str(tmp_path / "mov.fvol"),
                     "--lesion-label", "2", "--out-dir", str(out)])
        assert code == 0
        lesion_rows = [row for row in (out / "report.csv").read_text().splitlines()
                       if row.split(",")[1] == "label_2"]
        assert lesion_rows[0].split(",")[3] == "0.2500"

    def test_evaluate_zero_field_no_folding(self, tmp_path, synth_pair):
        field = FeatureVolume(np.zeros((24, 24, 24, 3), dtype=np.float32))
        write_fvol(field, tmp_path / "zero_field.fvol")
        out = tmp_path / "eval"
        code = main(["evaluate",
                     "--fixed-mask", str(synth_pair / "fixed_mask.fvol"),
                     "--warped-mask", str(synth_pair / "fixed_mask.fvol"),
                     "--field", str(tmp_path / "zero_field.fvol"),
                     "--out-dir", str(out)])
        assert code == 0
        row = (out / "report.csv").read_text().splitlines()[1]
        assert row.split(",")[7] == "0.0000"  # jac_fold_pct

    def test_export(self, tmp_path, synth_pair):
        code = main(["export", "--in", str(synth_pair / "fixed.fvol"),
                     "--out", str(tmp_path / "dumpbase")])
        assert code == 0
        assert (tmp_path / "dumpbase.raw").exists()
        assert (tmp_path / "dumpbase.txt").exists()

    def test_preprocess_resamples_volumes_and_masks(self, tmp_path, rng):
        # anisotropic 16x16x8 @ (1,1,2)mm -> isotropic 1mm, padded to 20^3
        data = (rng.standard_normal((16, 16, 8, 1)) * 30).astype(np.float32)
        vol = FeatureVolume(data, spacing=(1.0, 1.0, 2.0))
        mask = LabelMask((data[..., 0] > 0).astype(np.uint8), spacing=(1.0, 1.0, 2.0))
        write_fvol(vol, tmp_path / "vol.fvol")
        write_fvol(mask, tmp_path / "mask.fvol")
        out = tmp_path / "run"
        code = main([
            "register",
            "--fixed", str(tmp_path / "vol.fvol"),
            "--moving", str(tmp_path / "vol.fvol"),
            "--fixed-mask", str(tmp_path / "mask.fvol"),
            "--moving-mask", str(tmp_path / "mask.fvol"),
            "--preprocess", "--target-spacing", "1.0", "--pad-size", "20",
            "--out-dir", str(out), "--stage1-radius", "2",
            "--adam-iters", "5", "--timing", "zero",
        ])
        assert code == 0
        phi = read_fvol(out / "phi.fvol")
        assert phi.dims == (20, 20, 20)
        rows = (out / "report.csv").read_text().strip().splitlines()[1:]
        assert rows[0].split(",")[2] == "1.0000"


def make_stack_files(tmp_path, rng, z_total=6, k=2, w=6, h=6, d=8, dims=(24, 24, 6)):
    paths = []
    for name in ("ref", "mov"):
        n = 1 + (z_total - 1) // k
        grids = rng.standard_normal((n, w, h, d)).astype(np.float32) * 10.0
        stack = SliceFeatureStack(grids, np.arange(n) * k, z_total, k)
        vol = stack_to_volume(stack, source_dims=dims, encoder="stub")
        path = tmp_path / f"{name}_stack.fvol"
        write_fvol(vol, path)
        paths.append(path)
    return paths


class TestStackModeAndSweep:
    def test_register_stack_inputs(self, tmp_path, rng):
        ref_path, mov_path = make_stack_files(tmp_path, rng)
        out = tmp_path / "stackrun"
        code = main(["register", "--fixed", str(ref_path), "--moving", str(mov_path),
                     "--out-dir", str(out), "--d", "4", "--stage1-radius", "2",
                     "--stage1-grid", "2", "--adam-iters", "5", "--timing", "zero"])
        assert code == 0
        phi = read_fvol(out / "phi.fvol")
        assert phi.dims == (24, 24, 6)

    def test_sweep_rows_and_schema(self, tmp_path, rng):
        ref_path, mov_path = make_stack_files(tmp_path, rng)
        out = tmp_path / "sweeprun"
        code = main(["sweep", "--fixed", str(ref_path), "--moving", str(mov_path),
                     "--out-dir", str(out), "--d-values", "1,2,3,4",
                     "--stage1-radius", "2", "--stage1-grid", "2",
                     "--adam-iters", "3"])
        assert code == 0
        lines = (out / "sweep.csv").read_text().strip().splitlines()
        assert lines[0] == ("d,pair_id,label,dsc,v_eps,energy_init,energy_final,"
                            "jac_min,jac_fold_pct,seconds,peak_mb")
        assert len(lines) == 5  # header + one row per d (no masks -> single row)
        for line in lines[1:]:
            cells = line.split(",")
            assert float(cells[-1]) > 0  # peak memory positive
            assert float(cells[-2]) > 0  # wall seconds positive

    def test_per_encoder_default_d(self):
        from featreg.pipeline import resolve_d
        assert resolve_d(0, "sam", 256) == 16
        assert resolve_d(0, "medsam", 256) == 10
        assert resolve_d(0, "dinov2", 384) == 10
        assert resolve_d(0, "medclipsam", 768) == 16
        assert resolve_d(0, "stub", 8) == 8      # capped at the token dim
        assert resolve_d(0, None, 32) == 16      # unknown encoder
        assert resolve_d(4, "sam", 256) == 4     # explicit wins

    def test_stack_auto_d_resolved_and_echoed(self, tmp_path, rng):
        ref_path, mov_path = make_stack_files(tmp_path, rng)
        out = tmp_path / "autorun"
        code = main(["register", "--fixed", str(ref_path), "--moving", str(mov_path),
                     "--out-dir", str(out), "--stage1-radius", "2",
                     "--stage1-grid", "2", "--adam-iters", "3", "--timing", "zero"])
        assert code == 0
        import json
        payload = json.loads((out / "report.json").read_text())
        assert payload["config"]["d"] == "0"
        assert payload["config"]["d_effective"] == "8"  # stub tokens capped at D

    def test_numeric_failure_maps_to_exit_1(self, monkeypatch, tmp_path):
        from featreg import cli as cli_mod
        from featreg.errors import NumericFailure

        def boom(cfg):
            raise NumericFailure("synthetic NaN")

        monkeypatch.setattr(cli_mod, "run_register", boom)
        code = main(["register", "--fixed", "x", "--moving", "y",
                     "--out-dir", str(tmp_path)])
        assert code == 1

    def test_sweep_identical_volumes_single_d(self, tmp_path, rng):
        ref_path, _ = make_stack_files(tmp_path, rng)
        out = tmp_path / "sweepself"
        # d = D on identical volumes: one row, full-rank projection
        code = main(["sweep", "--fixed", str(ref_path), "--moving", str(ref_path),
                     "--out-dir", str(out), "--d-values", "8",
                     "--stage1-radius", "2", "--stage1-grid", "2",
                     "--adam-iters", "3"])
        assert code == 0
        lines = (out / "sweep.csv").read_text().strip().splitlines()
        assert len(lines) == 2
        assert lines[1].startswith("8,")

    def test_sweep_parallel_jobs_matches_sequential(self, tmp_path, rng):
        ref_path, mov_path = make_stack_files(tmp_path, rng)
        outs = {}
        for jobs in ("1", "2"):
            out = tmp_path / f"sweep_j{jobs}"
            code = main(["sweep", "--fixed", str(ref_path), "--moving", str(mov_path),
                         "--out-dir", str(out), "--d-values", "2,4", "--jobs", jobs,
                         "--stage1-radius", "2", "--stage1-grid", "2",
                         "--adam-iters", "2", "--timing", "zero"])
            assert code == 0
            # drop the nondeterministic peak_mb column before comparing
            rows = [line.rsplit(",", 1)[0] for line
                    in (out / "sweep.csv").read_text().strip().splitlines()]
            outs[jobs] = rows
        assert outs["1"] == outs["2"]

    def test_sweep_propagates_errors_but_continues(self, tmp_path, rng):
        ref_path, mov_path = make_stack_files(tmp_path, rng, d=4)
        out = tmp_path / "sweepbad"
        # d=9 exceeds token dim 4 -> that run fails, d=2 still completes
        code = main(["sweep", "--fixed", str(ref_path), "--moving", str(mov_path),
                     "--out-dir", str(out), "--d-values", "2,9",
                     "--stage1-radius", "2", "--stage1-grid", "2",
                     "--adam-iters", "2"])
        assert code == 2
        lines = (out / "sweep.csv").read_text().strip().splitlines()
        assert len(lines) == 2  # header + surviving d=2 row
