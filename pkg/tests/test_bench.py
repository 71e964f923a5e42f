import csv
import dataclasses
import json

import numpy as np
import pytest

from hyco.bench import cli
from hyco.bench.experiments import ConfigError, ExperimentConfig, preset
from hyco.bench.manifest import read_manifest, sha256_file
from hyco.bench.render import read_pgm, write_pgm, write_svg
from hyco.core import Dataset, Grid2D, ScalarField
from hyco.nn import init_params, read_checkpoint


def tiny(tmp_path, problem="helmholtz", **hy):
    base = preset(problem, "desk", "q2" if problem == "helmholtz" else "omega")
    h = dataclasses.replace(base.hyco, max_iters=hy.pop("max_iters", 4), H=30, **hy)
    if problem == "helmholtz":
        return dataclasses.replace(base, n=16, hidden_layers=(8, 8), hyco=h, out=str(tmp_path))
    return dataclasses.replace(base, n=8, n_steps=40, T=16.0, snapshot_stride=5, M=100,
                               hidden_layers=(8, 8), hyco=h, out=str(tmp_path))


class TestPresets:
    def test_gray_scott_full_scale(self):
        p = preset("gray_scott", "paper")
        assert (p.n, p.n_steps, p.T, p.M, p.hyco.H) == (64, 5000, 2000.0, 5000, 1000)

    def test_desk(self):
        g = preset("gray_scott", "desk")
        assert (g.n, g.n_steps, g.T, g.M, g.hyco.H, g.hyco.max_iters) == (32, 1000, 400.0, 1000, 300, 200)
        h = preset("helmholtz", "desk", "q2")
        assert (h.n, h.M, h.hyco.H, h.hyco.max_iters) == (48, 25, 200, 2000)

    def test_validation(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"problem": "helmholtz", "region": "q3"})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"problem": "gray_scott", "n": 256, "n_steps": 10, "T": 400.0})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"bogus": 1})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"hyco": {"H": 0}})

    def test_seed_drives_all_streams(self):
        c = ExperimentConfig.from_dict({"seed": 7})
        assert (c.hyco.seed_data, c.hyco.seed_ghost, c.hyco.seed_init) == (7, 7, 7)

    def test_json_round_trip(self):
        c = preset("gray_scott", "desk")
        assert ExperimentConfig.from_dict(json.loads(c.to_json())) == c


class TestGenerate:
    def test_helmholtz_omega_dataset(self, tmp_path):
        cfg = dataclasses.replace(preset("helmholtz", "desk", "omega"), out=str(tmp_path))
        cli.cmd_generate(cfg)
        ds = Dataset.from_csv(tmp_path / "dataset.csv")
        assert len(ds) == 25
        assert np.all(np.abs(ds.points[:, :2]) <= np.pi)
        man = read_manifest(tmp_path / "manifest.json")
        for name, digest in man["files"].items():
            assert sha256_file(tmp_path / name) == digest
        assert man["status"] == "ok" and "metrics" not in man

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            cli.cmd_generate(dataclasses.replace(tiny(d, "gray_scott"), out=str(d)))
        for name in ("dataset.csv", "reference.npy", "reference_u.hyco"):
            assert (a / name).read_bytes() == (b / name).read_bytes()


class TestTrainEvaluate:
    def test_missing_dataset(self, tmp_path):
        with pytest.raises(cli.InputError):
            cli.cmd_train(tiny(tmp_path))

    def test_zero_iterations(self, tmp_path):
        cfg = tiny(tmp_path, max_iters=0)
        cli.cmd_generate(cfg)
        run = cli.cmd_train(cfg, "pure_nn")
        assert (run / "history.csv").read_text().count("\n") == 1
        theta = read_checkpoint(run / "theta.hyco")
        init = init_params(theta.config)
        assert all(a.tobytes() == b.tobytes() for a, b in zip(theta.arrays(), init.arrays()))

    def test_table_rows_in_requested_order(self, tmp_path):
        cfg = tiny(tmp_path)
        cli.cmd_generate(cfg)
        for m in ("physical_only", "pure_nn", "hyco"):
            cli.cmd_train(cfg, m)
        rows = cli.cmd_evaluate(cfg, ["pure_nn", "hyco", "physical_only"])
        assert [r["method"] for r in rows] == ["pure_nn", "hyco", "physical_only"]
        assert rows[0]["e_p"] is None and rows[2]["e_s_syn"] is None
        text = (tmp_path / "metrics.txt").read_text().splitlines()
        assert text[0].split() == ["method", "e_s_phy", "e_s_syn", "e_p"]
        assert text[2].split()[1] == "n/a"
        with open(tmp_path / "metrics.csv") as fh:
            assert [r["method"] for r in csv.DictReader(fh)] == ["pure_nn", "hyco", "physical_only"]
        man = read_manifest(tmp_path / "hyco" / "manifest.json")
        assert man["status"] == "ok" and set(man["metrics"]["final"]) == {"e_s_phy", "e_s_syn", "e_p"}

    def test_reference_against_itself(self, tmp_path):
        cfg = tiny(tmp_path, "gray_scott")
        cli.cmd_generate(cfg)
        run = tmp_path / "physical_only"
        run.mkdir()
        problem = cli.build_problem(cfg)
        (run / "lambda.json").write_text(json.dumps({"internal": list(problem.lambda_true)}))
        row = cli.cmd_evaluate(cfg, ["physical_only"])[0]
        assert row["e_s_phy"] == 0.0 and row["e_p"] == 0.0

    def test_shape_mismatch(self, tmp_path):
        cfg = tiny(tmp_path)
        cli.cmd_generate(cfg)
        cli.cmd_train(cfg, "physical_only")
        bigger = dataclasses.replace(cfg, n=20)
        with pytest.raises(cli.InputError):
            cli.cmd_evaluate(bigger, ["physical_only"])

    def test_failure_keeps_partial_history(self, tmp_path):
        cfg = tiny(tmp_path, "gray_scott", lambda_optimizer="plain_sgd", lr_lambda=1e12,
                   update_schedule="jacobi")
        cli.cmd_generate(cfg)
        with pytest.raises(cli.TrainingError):
            cli.cmd_train(cfg, "hyco")
        assert (tmp_path / "hyco" / "history.csv").read_text().count("\n") == 2
        assert read_manifest(tmp_path / "hyco" / "manifest.json")["status"] == "failed"


class TestRender:
    def test_two_by_two(self, tmp_path):
        write_pgm(np.array([[0.0, 1.0], [1.0, 0.0]]), tmp_path / "a.pgm")
        assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n2 2\n255\n")
        assert read_pgm(tmp_path / "a.pgm").ravel().tolist() == [0, 255, 255, 0]

    def test_constant_field(self, tmp_path):
        g = Grid2D(4, 3, 0, 1, 0, 1)
        from hyco.core import write_field
        write_field(ScalarField(g, np.full(g.shape, 2.5)), tmp_path / "c.hyco")
        cli.cmd_render([tmp_path / "c.hyco"], tmp_path / "render")
        pix = read_pgm(tmp_path / "render" / "c.pgm")
        assert pix.shape == (3, 4) and np.all(pix == pix[0, 0])
        notes = read_manifest(tmp_path / "render" / "manifest.json")["notes"]
        assert len(notes) == 1 and "constant" in notes[0]

    def test_svg_sensor_markers(self, tmp_path):
        g = Grid2D(6, 6, 0, np.pi, 0, np.pi)
        sensors = np.random.default_rng(0).uniform(0, np.pi, size=(25, 3))
        write_svg(ScalarField(g, np.random.default_rng(1).normal(size=g.shape)), tmp_path / "k.svg", sensors)
        text = (tmp_path / "k.svg").read_text()
        assert text.count("<circle") == 25 and text.startswith("<svg")


class TestSweep:
    def test_single_seed_matches_run(self, tmp_path):
        cfg = tiny(tmp_path / "sweep")
        agg = cli.cmd_sweep(cfg, [3], ["physical_only"])
        single = tiny(tmp_path / "single").with_seed(3)
        cli.cmd_generate(single)
        cli.cmd_train(single, "physical_only")
        row = cli.cmd_evaluate(single, ["physical_only"])[0]
        assert agg[0]["e_p_median"] == row["e_p"] and agg[0]["n_ok"] == 1

    def test_repeated_seed_zero_iqr(self, tmp_path, monkeypatch):
        monkeypatch.setenv("HYCO_THREADS", "1")
        agg = cli.cmd_sweep(tiny(tmp_path), [1, 1, 1], ["hyco"])
        assert agg[0]["n_ok"] == 3 and agg[0]["e_p_iqr"] == 0.0 and agg[0]["e_s_syn_iqr"] == 0.0

    def test_failures_recorded(self, tmp_path):
        cfg = tiny(tmp_path, "gray_scott", lambda_optimizer="plain_sgd", lr_lambda=1e12,
                   update_schedule="jacobi")
        agg = cli.cmd_sweep(cfg, [0], ["hyco", "pure_nn"])
        assert agg[0]["n_failed"] == 1 and agg[1]["n_ok"] == 1
        assert "error" in (tmp_path / "sweep_runs.csv").read_text()


class TestCommandLine:
    def test_exit_codes(self, tmp_path, monkeypatch):
        assert cli.run(["train", "--out", str(tmp_path / "nothing")]) == 2
        assert cli.run(["generate", "--region", "q2", "--method", "pinn", "--out", str(tmp_path)]) == 2
        with pytest.raises(SystemExit) as e:
            cli.run(["generate", "--problem", "heat"])
        assert e.value.code == 2
        monkeypatch.setenv("HYCO_THREADS", "zero")
        assert cli.run(["sweep", "--out", str(tmp_path / "s"), "--seeds", "0"]) == 2

    def test_runtime_error_exit_code(self, tmp_path):
        cfg = tiny(tmp_path, "gray_scott", lambda_optimizer="plain_sgd", lr_lambda=1e12,
                   update_schedule="jacobi")
        (tmp_path / "cfg.json").write_text(cfg.to_json())
        assert cli.run(["generate", "--config", str(tmp_path / "cfg.json")]) == 0
        assert cli.run(["train", "--out", str(tmp_path)]) == 1

    def test_flags_override_file(self, tmp_path, capsys):
        cfg = tiny(tmp_path)
        (tmp_path / "cfg.json").write_text(cfg.to_json())
        out = tmp_path / "run"
        assert cli.run(["generate", "--config", str(tmp_path / "cfg.json"), "--region", "omega",
                        "--seed", "5", "--out", str(out)]) == 0
        saved = json.loads((out / "config.json").read_text())
        assert saved["region"] == "omega" and saved["hyco"]["seed_ghost"] == 5 and saved["n"] == 16
        assert cli.run(["train", "--out", str(out), "--method", "physical_only"]) == 0
        assert cli.run(["evaluate", "--out", str(out)]) == 0
        assert "physical_only" in capsys.readouterr().out
        assert cli.run(["render", "--out", str(out)]) == 0
        assert (out / "render" / "reference.pgm").exists()
