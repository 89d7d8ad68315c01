import math
from dataclasses import replace

import numpy as np
import pytest

import cpfuse.experiment
from cpfuse.cli import main
from cpfuse.degradation import DegradationConfig
from cpfuse.experiment import (
    ExperimentConfig,
    ResultRow,
    SceneConfig,
    emit_results,
    read_results,
    run_experiment,
    simulate_scene,
)
from cpfuse.fileio import read_matrix, read_tensor, write_tensor
from cpfuse.solver import SolverConfig, SolverDivergenceError


def small_config(**overrides):
    defaults = dict(
        degradation=DegradationConfig(kernel_size=3, sigma=2.0, factor=2, num_msi_bands=3),
        solver=SolverConfig(max_iters=100),
        scene=SceneConfig(dims=(10, 10, 6), rank=2, seed=0),
        algorithm="nn-nls",
        rank=2,
        replicates=1,
        sweep_axis="snr",
        sweep_values=(math.inf,),
        master_seed=0,
    )
    defaults.update(overrides)
    return ExperimentConfig(**defaults)


class TestSimulateScene:
    def test_shape_and_nonnegativity(self):
        sri = simulate_scene(SceneConfig(dims=(7, 6, 5), rank=3, seed=1))
        assert sri.shape == (7, 6, 5)
        assert np.all(sri >= 0.0)

    def test_deterministic_per_seed(self):
        cfg = SceneConfig(dims=(5, 5, 4), rank=2, seed=9)
        np.testing.assert_array_equal(simulate_scene(cfg), simulate_scene(cfg))
        other = SceneConfig(dims=(5, 5, 4), rank=2, seed=10)
        assert not np.array_equal(simulate_scene(cfg), simulate_scene(other))

    def test_rank_one_scene_has_rank_one_unfoldings(self):
        sri = simulate_scene(SceneConfig(dims=(6, 5, 4), rank=1, seed=0))
        singulars = np.linalg.svd(sri.reshape(6, -1, order="F"), compute_uv=False)
        assert singulars[1] <= 1e-12 * singulars[0]

    def test_background_is_shared_across_bands(self):
        base_cfg = SceneConfig(dims=(8, 7, 3), rank=2, seed=4)
        bumped_cfg = SceneConfig(dims=(8, 7, 3), rank=2, seed=4, background_amplitude=0.5)
        diff = simulate_scene(bumped_cfg) - simulate_scene(base_cfg)
        for k in (1, 2):
            np.testing.assert_allclose(diff[:, :, k], diff[:, :, 0], rtol=1e-12)
        assert diff.max() > 0.4
        assert np.all(diff >= 0.0)

    def test_excessive_rank_warns(self):
        with pytest.warns(UserWarning):
            simulate_scene(SceneConfig(dims=(4, 4, 3), rank=5, seed=0))

    def test_aviris_scale_scene(self):
        sri = simulate_scene(SceneConfig(dims=(80, 84, 204), rank=30, seed=0))
        assert sri.shape == (80, 84, 204)
        assert np.all(sri >= 0.0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"dims": (0, 4, 4), "rank": 2},
            {"dims": (4, 4), "rank": 2},
            {"dims": (4, 4, 4), "rank": 0},
            {"dims": (4, 4, 4), "rank": 2, "background_amplitude": -1.0},
        ],
    )
    def test_invalid_config_raises(self, kwargs):
        with pytest.raises(ValueError):
            simulate_scene(SceneConfig(**kwargs))


class TestRunExperiment:
    def test_single_replicate_row(self):
        rows, summary = run_experiment(small_config())
        assert len(rows) == 1 and len(summary) == 1
        row = rows[0]
        assert row.algorithm == "nn-nls"
        assert row.snr_db == math.inf
        assert row.rank == 2
        assert row.replicate == 0
        assert row.converged
        assert row.rsnr_db > 60.0
        assert row.iterations > 0
        assert summary[0].median_rmse == row.rmse

    def test_median_is_middle_order_statistic(self):
        rows, summary = run_experiment(
            small_config(replicates=3, degradation=DegradationConfig(
                kernel_size=3, sigma=2.0, factor=2, num_msi_bands=3), sweep_values=(15.0,))
        )
        assert len(rows) == 3
        values = sorted(r.rmse for r in rows)
        assert summary[0].median_rmse == values[1]
        assert summary[0].replicates == 3

    def test_replicates_differ_through_noise_and_init(self):
        rows, _ = run_experiment(small_config(replicates=2, sweep_values=(10.0,)))
        assert rows[0].rmse != rows[1].rmse

    def test_snr_sweep_median_rsnr_is_nondecreasing(self):
        _, summary = run_experiment(
            small_config(replicates=3, sweep_values=(0.0, 5.0, 10.0))
        )
        medians = [s.median_rsnr_db for s in summary]
        for lower, higher in zip(medians, medians[1:]):
            assert higher >= lower

    def test_rank_sweep_axis(self):
        rows, summary = run_experiment(
            small_config(sweep_axis="rank", sweep_values=(1, 2), replicates=1)
        )
        assert [r.rank for r in rows] == [1, 2]
        assert all(r.snr_db == math.inf for r in rows)
        assert [s.rank for s in summary] == [1, 2]

    def test_loaded_scene_file(self, tmp_path):
        sri = simulate_scene(SceneConfig(dims=(10, 10, 6), rank=2, seed=3))
        path = tmp_path / "scene.dt3"
        write_tensor(path, sri)
        rows, _ = run_experiment(small_config(scene=None, sri_path=str(path)))
        assert rows[0].converged
        assert rows[0].rsnr_db > 60.0

    def test_deterministic_rows(self):
        # wall time is the one nondeterministic column
        cfg = small_config(replicates=2, sweep_values=(20.0,))
        rows_a, _ = run_experiment(cfg)
        rows_b, _ = run_experiment(cfg)
        strip = lambda r: replace(r, wall_time_seconds=0.0)  # noqa: E731
        assert [strip(r) for r in rows_a] == [strip(r) for r in rows_b]

    def test_worker_pool_matches_serial(self):
        serial = small_config(replicates=2, solver=SolverConfig(max_iters=30))
        pooled = small_config(replicates=2, solver=SolverConfig(max_iters=30), workers=2)
        rows_s, _ = run_experiment(serial)
        rows_p, _ = run_experiment(pooled)
        for a, b in zip(rows_s, rows_p):
            assert a.rmse == b.rmse and a.iterations == b.iterations

    def test_solver_divergence_yields_nan_row(self, monkeypatch):
        def explode(*args, **kwargs):
            raise SolverDivergenceError("forced failure")

        monkeypatch.setattr(cpfuse.experiment, "solve", explode)
        rows, summary = run_experiment(small_config())
        assert len(rows) == 1
        assert not rows[0].converged
        assert math.isnan(rows[0].rmse)
        assert math.isnan(summary[0].median_rmse)

    def test_broken_degradation_fails_coupling_check(self, monkeypatch):
        real = cpfuse.experiment.degrade

        def lossy(t, ops):
            hsi, msi = real(t, ops)
            return hsi + 1.0, msi

        monkeypatch.setattr(cpfuse.experiment, "degrade", lossy)
        with pytest.raises(RuntimeError, match="coupling"):
            run_experiment(small_config())

    @pytest.mark.parametrize(
        "overrides",
        [
            {"scene": None},
            {"algorithm": "newton"},
            {"sweep_axis": "sigma"},
            {"sweep_values": ()},
            {"replicates": 0},
            {"workers": 0},
            {"rank": 0},
            {"sweep_axis": "rank", "sweep_values": (0,)},
        ],
    )
    def test_invalid_config_raises(self, overrides):
        with pytest.raises(ValueError):
            run_experiment(small_config(**overrides))

    def test_both_scene_sources_raise(self):
        with pytest.raises(ValueError):
            run_experiment(small_config(sri_path="x.dt3"))


class TestResultsCsv:
    def rows(self):
        return [
            ResultRow("nn-nls", math.inf, 3, 0, 0.125, 0.99, 42.5, 0.01, 17, 0.0, True),
            ResultRow("als", 5.0, 3, 1, 0.25, 0.5, -3.0, 0.2, 200, 0.0, False),
        ]

    def test_round_trip(self, tmp_path):
        path = tmp_path / "results.csv"
        emit_results(self.rows(), path)
        assert read_results(path) == self.rows()

    def test_header_and_serialization(self, tmp_path):
        path = tmp_path / "results.csv"
        emit_results(self.rows(), path)
        lines = path.read_text().splitlines()
        assert lines[0] == (
            "algorithm,snr_db,rank,replicate,rmse,cc,rsnr_db,sam,"
            "iterations,wall_time_seconds,converged"
        )
        assert lines[1].startswith("nn-nls,inf,3,0,0.125,")
        assert lines[1].endswith(",true")
        assert lines[2].endswith(",false")

    def test_zero_rows_gives_header_only(self, tmp_path):
        path = tmp_path / "results.csv"
        emit_results([], path)
        assert path.read_text().count("\n") == 1
        assert read_results(path) == []

    def test_emit_is_deterministic(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        emit_results(self.rows(), a)
        emit_results(self.rows(), b)
        assert a.read_bytes() == b.read_bytes()

    def test_nan_serialises_and_parses(self, tmp_path):
        row = ResultRow("nn-nls", 5.0, 3, 0, math.nan, math.nan, math.nan, math.nan, 0, 0.0, False)
        path = tmp_path / "results.csv"
        emit_results([row], path)
        assert ",nan," in path.read_text()
        back = read_results(path)[0]
        assert math.isnan(back.rmse)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "results.csv"
        path.write_text("wrong,header\n1,2\n")
        with pytest.raises(ValueError):
            read_results(path)


class TestCliPipeline:
    def simulate(self, tmp_path, dims=(12, 12, 8), rank=2):
        sri = tmp_path / "sri.dt3"
        rc = main(
            ["simulate", "--dims", *map(str, dims), "--rank", str(rank),
             "--seed", "0", "--out", str(sri)]
        )
        assert rc == 0
        return sri

    def degrade(self, tmp_path, sri):
        args = [
            "degrade", "--sri", str(sri),
            "--out-hsi", str(tmp_path / "hsi.dt3"),
            "--out-msi", str(tmp_path / "msi.dt3"),
            "--kernel-size", "3", "--factor", "2", "--msi-bands", "4",
            "--out-p1", str(tmp_path / "p1.dm2"),
            "--out-p2", str(tmp_path / "p2.dm2"),
            "--out-pm", str(tmp_path / "pm.dm2"),
        ]
        assert main(args) == 0
        return tmp_path / "hsi.dt3", tmp_path / "msi.dt3"

    def test_simulate_writes_scene(self, tmp_path):
        sri = self.simulate(tmp_path)
        t = read_tensor(sri)
        assert t.shape == (12, 12, 8)
        assert np.all(t >= 0.0)

    def test_degrade_shapes_and_operator_dumps(self, tmp_path):
        sri = self.simulate(tmp_path)
        hsi, msi = self.degrade(tmp_path, sri)
        assert read_tensor(hsi).shape == (6, 6, 8)
        assert read_tensor(msi).shape == (12, 12, 4)
        assert read_matrix(tmp_path / "p1.dm2").shape == (6, 12)
        assert read_matrix(tmp_path / "pm.dm2").shape == (4, 8)

    def test_fuse_recovers_scene(self, tmp_path, capsys):
        sri = self.simulate(tmp_path)
        hsi, msi = self.degrade(tmp_path, sri)
        est = tmp_path / "est.dt3"
        rc = main(
            ["fuse", "--hsi", str(hsi), "--msi", str(msi), "--rank", "2",
             "--out", str(est),
             "--p1", str(tmp_path / "p1.dm2"),
             "--p2", str(tmp_path / "p2.dm2"),
             "--pm", str(tmp_path / "pm.dm2")]
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "converged=true" in out
        truth = read_tensor(sri)
        got = read_tensor(est)
        rel = np.linalg.norm(got - truth) / np.linalg.norm(truth)
        assert rel < 1e-4

    def test_fuse_flag_built_operators_match_files(self, tmp_path):
        sri = self.simulate(tmp_path)
        hsi, msi = self.degrade(tmp_path, sri)
        from_files = tmp_path / "a.dt3"
        from_flags = tmp_path / "b.dt3"
        main(["fuse", "--hsi", str(hsi), "--msi", str(msi), "--rank", "2",
              "--out", str(from_files),
              "--p1", str(tmp_path / "p1.dm2"), "--p2", str(tmp_path / "p2.dm2"),
              "--pm", str(tmp_path / "pm.dm2")])
        main(["fuse", "--hsi", str(hsi), "--msi", str(msi), "--rank", "2",
              "--out", str(from_flags), "--kernel-size", "3", "--factor", "2"])
        np.testing.assert_array_equal(read_tensor(from_files), read_tensor(from_flags))

    def test_fuse_partial_operator_files_fail(self, tmp_path, capsys):
        sri = self.simulate(tmp_path)
        hsi, msi = self.degrade(tmp_path, sri)
        rc = main(["fuse", "--hsi", str(hsi), "--msi", str(msi), "--rank", "2",
                   "--out", str(tmp_path / "x.dt3"), "--p1", str(tmp_path / "p1.dm2")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_fuse_als_backend_runs(self, tmp_path, capsys):
        sri = self.simulate(tmp_path)
        hsi, msi = self.degrade(tmp_path, sri)
        rc = main(["fuse", "--hsi", str(hsi), "--msi", str(msi), "--rank", "2",
                   "--out", str(tmp_path / "als.dt3"), "--algorithm", "als",
                   "--kernel-size", "3", "--factor", "2"])
        assert rc == 0
        assert read_tensor(tmp_path / "als.dt3").shape == (12, 12, 8)

    def test_evaluate_prints_metrics(self, tmp_path, capsys):
        sri = self.simulate(tmp_path)
        rc = main(["evaluate", "--estimate", str(sri), "--truth", str(sri)])
        assert rc == 0
        out = capsys.readouterr().out.splitlines()
        parsed = dict(line.split("=", 1) for line in out if "=" in line)
        assert float(parsed["rmse"]) == 0.0
        assert float(parsed["cc"]) == 1.0
        assert parsed["rsnr_db"] == "inf"
        assert float(parsed["sam"]) < 1e-7

    def test_evaluate_degrees_flag(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        truth, est = tmp_path / "t.dt3", tmp_path / "e.dt3"
        base = rng.uniform(0.5, 1.0, (4, 4, 3))
        write_tensor(truth, base)
        write_tensor(est, base + 0.1 * rng.uniform(size=(4, 4, 3)))
        main(["evaluate", "--estimate", str(est), "--truth", str(truth)])
        radians = float(dict(
            line.split("=", 1) for line in capsys.readouterr().out.splitlines()
        )["sam"])
        main(["evaluate", "--estimate", str(est), "--truth", str(truth), "--degrees"])
        degrees = float(dict(
            line.split("=", 1) for line in capsys.readouterr().out.splitlines()
        )["sam"])
        np.testing.assert_allclose(degrees, math.degrees(radians), rtol=1e-12)

    def sweep_args(self, out_dir, extra=()):
        return [
            "sweep", "--dims", "10", "10", "6", "--true-rank", "2", "--rank", "2",
            "--snr-db", "inf", "--replicates", "2", "--master-seed", "0",
            "--kernel-size", "3", "--factor", "2", "--msi-bands", "3",
            "--max-iters", "100", "--out-dir", str(out_dir), *extra,
        ]

    def test_sweep_writes_deterministic_csv(self, tmp_path):
        dir_a, dir_b = tmp_path / "a", tmp_path / "b"
        assert main(self.sweep_args(dir_a)) == 0
        assert main(self.sweep_args(dir_b)) == 0
        assert (dir_a / "results.csv").read_bytes() == (dir_b / "results.csv").read_bytes()
        assert (dir_a / "summary.csv").read_bytes() == (dir_b / "summary.csv").read_bytes()
        rows = read_results(dir_a / "results.csv")
        assert len(rows) == 2
        assert all(r.wall_time_seconds == 0.0 for r in rows)

    def test_sweep_record_timing_keeps_wall_time(self, tmp_path):
        out = tmp_path / "timed"
        assert main(self.sweep_args(out, extra=("--record-timing",))) == 0
        rows = read_results(out / "results.csv")
        assert any(r.wall_time_seconds > 0.0 for r in rows)

    def test_sweep_rank_axis(self, tmp_path):
        out = tmp_path / "ranks"
        rc = main([
            "sweep", "--dims", "10", "10", "6", "--true-rank", "2",
            "--ranks", "1", "2", "--replicates", "1", "--master-seed", "0",
            "--kernel-size", "3", "--factor", "2", "--msi-bands", "3",
            "--max-iters", "60", "--out-dir", str(out),
        ])
        assert rc == 0
        assert [r.rank for r in read_results(out / "results.csv")] == [1, 2]

    def test_sweep_workers_env_override(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("CPFUSE_WORKERS", "not-a-number")
        assert main(self.sweep_args(tmp_path / "x")) == 1
        assert "error:" in capsys.readouterr().err

        monkeypatch.setenv("CPFUSE_WORKERS", "2")
        out = tmp_path / "pooled"
        assert main(self.sweep_args(out)) == 0
        serial = tmp_path / "serial"
        monkeypatch.delenv("CPFUSE_WORKERS")
        assert main(self.sweep_args(serial)) == 0
        assert (out / "results.csv").read_bytes() == (serial / "results.csv").read_bytes()

    def test_sweep_requires_exactly_one_scene_source(self, tmp_path, capsys):
        rc = main([
            "sweep", "--snr-db", "inf", "--replicates", "1", "--master-seed", "0",
            "--out-dir", str(tmp_path / "x"),
        ])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_missing_input_file_exits_nonzero(self, tmp_path, capsys):
        rc = main(["fuse", "--hsi", str(tmp_path / "absent.dt3"),
                   "--msi", str(tmp_path / "absent2.dt3"), "--rank", "2",
                   "--out", str(tmp_path / "o.dt3")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_shape_mismatch_exits_nonzero(self, tmp_path, capsys):
        a, b = tmp_path / "a.dt3", tmp_path / "b.dt3"
        write_tensor(a, np.ones((3, 3, 2)))
        write_tensor(b, np.ones((4, 4, 2)))
        rc = main(["evaluate", "--estimate", str(a), "--truth", str(b)])
        assert rc == 1
        assert "error:" in capsys.readouterr().err
