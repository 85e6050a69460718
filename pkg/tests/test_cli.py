import json

import numpy as np
import pytest

from distill_lab import cli
from distill_lab.config import ConfigError, RunConfig, load_config, save_resolved

FAST_DISTILL = [
    "--iters", "10", "--init-steps", "30", "--eval-samples", "300",
    "--hidden", "8", "--batch", "4",
]


def run_cli(*argv):
    return cli.main(list(argv))


def read_report(out):
    return json.loads((out / "report.json").read_text())


class TestCost:
    def test_table_contains_headline_numbers(self, tmp_path, capsys):
        assert run_cli("cost", "--out", str(tmp_path)) == 0
        text = capsys.readouterr().out
        assert "77.5" in text
        assert "255" in text
        assert (tmp_path / "cost.csv").exists()
        assert (tmp_path / "cost.png").exists()

    def test_k_flag(self, tmp_path, capsys):
        assert run_cli("cost", "-K", "1", "--out", str(tmp_path)) == 0
        assert "85" in capsys.readouterr().out


class TestToy1d:
    def test_zero_steps_reports_initialization_only(self, tmp_path):
        out = tmp_path / "toy"
        assert run_cli("toy1d", "--objective", "fisher", "--steps", "0", "--out", str(out)) == 0
        rows = (out / "trajectory_fisher.csv").read_text().splitlines()
        assert len(rows) == 2  # header + initialization row
        rep = read_report(out)
        names = {a["name"]: a for a in rep["assertions"]}
        assert names["fisher_final_kl"]["observed"] == pytest.approx(0.5506203896, abs=1e-6)

    def test_strict_fails_on_tied_cross_metrics(self, tmp_path):
        # at 0 steps both fits are the same point, so neither strictly wins
        out = tmp_path / "tied"
        assert run_cli("toy1d", "--objective", "both", "--steps", "0", "--out", str(out)) == 0
        assert not read_report(out)["passed"]
        assert (
            run_cli("toy1d", "--objective", "both", "--steps", "0", "--out", str(out), "--strict")
            == 1
        )

    def test_figures_rendered_alongside_csv(self, tmp_path):
        out = tmp_path / "fig"
        assert run_cli("toy1d", "--objective", "fisher", "--steps", "2", "--out", str(out)) == 0
        assert (out / "toy1d.png").exists()
        assert (out / "trajectory_fisher.csv").exists()

    def test_no_figures_flag(self, tmp_path):
        out = tmp_path / "nofig"
        assert run_cli(
            "toy1d", "--objective", "fisher", "--steps", "1", "--out", str(out), "--no-figures"
        ) == 0
        assert not (out / "toy1d.png").exists()


class TestRecursion:
    def test_lambda_sweep_csv_with_one_interior_minimum(self, tmp_path):
        out = tmp_path / "rec"
        assert run_cli("recursion", "--lambda-sweep", "0.01:1:50", "--out", str(out)) == 0
        rows = (out / "lambda_sweep.csv").read_text().splitlines()
        assert len(rows) == 51  # header + 50 sweep rows
        proxy = np.array([float(r.split(",")[3]) for r in rows[1:]])
        interior = np.sum((proxy[1:-1] < proxy[:-2]) & (proxy[1:-1] < proxy[2:]))
        assert interior == 1
        rep = read_report(out)
        names = {a["name"]: a for a in rep["assertions"]}
        assert names["error_proxy_interior_minima"]["passed"]
        assert names["random_draws_within_bounds"]["passed"]

    def test_trajectory_csv(self, tmp_path):
        out = tmp_path / "traj"
        assert run_cli("recursion", "--drive", "zero", "--steps", "100", "--out", str(out)) == 0
        rows = (out / "trajectory.csv").read_text().splitlines()
        assert len(rows) == 102  # header + r_0..r_100


class TestIdentity:
    def test_report_passes(self, tmp_path):
        out = tmp_path / "id"
        assert run_cli("identity", "--tuples", "10", "--out", str(out), "--strict") == 0
        rep = read_report(out)
        assert rep["passed"]
        assert (out / "identity.csv").exists()


class TestGradcheck:
    def test_small_run_passes(self, tmp_path):
        out = tmp_path / "gc"
        assert run_cli("gradcheck", "--points", "3", "--out", str(out), "--strict") == 0
        rep = read_report(out)
        assert all(a["passed"] for a in rep["assertions"])


class TestDistill:
    def test_ten_iteration_csv(self, tmp_path):
        out = tmp_path / "d"
        code = run_cli(
            "distill", "--method", "sgmd", "--lambda", "0.1", "--seed", "7",
            "--out", str(out), *FAST_DISTILL,
        )
        assert code == 0
        rows = (out / "log.csv").read_text().splitlines()
        assert len(rows) == 11  # header + 10 iterations
        assert (out / "ckpt_initial.bin").exists()
        assert (out / "ckpt_final.bin").exists()
        assert (out / "training.png").exists()
        assert (out / "samples.png").exists()

    def test_rerun_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        args = ["distill", "--method", "sgmd", "--seed", "3", *FAST_DISTILL]
        assert run_cli(*args, "--out", str(a)) == 0
        assert run_cli(*args, "--out", str(b)) == 0
        for name in ("log.csv", "ckpt_final.bin", "report.json", "training.png", "samples.png"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_reweighted_alpha_one_matches_plain_implicit_through_cli(self, tmp_path):
        a, b = tmp_path / "sid", tmp_path / "sim"
        assert run_cli(
            "distill", "--method", "sid", "--sid-alpha", "1.0", "--seed", "5",
            "--out", str(a), *FAST_DISTILL,
        ) == 0
        assert run_cli(
            "distill", "--method", "tsg_sim", "--seed", "5", "--out", str(b), *FAST_DISTILL
        ) == 0
        assert (a / "ckpt_final.bin").read_bytes() == (b / "ckpt_final.bin").read_bytes()

    def test_writes_stay_inside_output_dir(self, tmp_path, monkeypatch):
        workdir = tmp_path / "cwd"
        workdir.mkdir()
        monkeypatch.chdir(workdir)
        out = tmp_path / "only-here"
        assert run_cli("distill", "--method", "sgmd", "--out", str(out), *FAST_DISTILL) == 0
        assert list(workdir.iterdir()) == []

    def test_custom_teacher_flags(self, tmp_path):
        out = tmp_path / "t"
        assert run_cli(
            "distill", "--method", "tsg_fisher", "--fake-updates", "1",
            "--teacher-weights", "1.0", "--teacher-means", "0.5", "--teacher-stds", "0.8",
            "--out", str(out), *FAST_DISTILL,
        ) == 0
        assert "weights = 1.0" in (out / "resolved.cfg").read_text()


class TestConfigFile:
    def test_empty_file_gives_defaults(self, tmp_path):
        cfg_path = tmp_path / "empty.cfg"
        cfg_path.write_text("")
        out = tmp_path / "out"
        assert run_cli(
            "distill", "--config", str(cfg_path), "--out", str(out), *FAST_DISTILL
        ) == 0
        text = (out / "resolved.cfg").read_text()
        assert "seed = 0" in text

    def test_flag_overrides_file(self, tmp_path):
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text("[trainer]\nmethod = sgmd\nlambda = 0.5\n")
        out = tmp_path / "out"
        assert run_cli(
            "distill", "--config", str(cfg_path), "--lambda", "0.1", "--out", str(out),
            *FAST_DISTILL,
        ) == 0
        assert "lambda = 0.1" in (out / "resolved.cfg").read_text()

    def test_unknown_key_reports_line_number(self, tmp_path):
        cfg_path = tmp_path / "bad.cfg"
        cfg_path.write_text("[trainer]\nmethod = sgmd\nbogus = 1\n")
        with pytest.raises(ConfigError, match=":3:"):
            load_config(cfg_path)

    def test_bad_config_exits_nonzero(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.cfg"
        cfg_path.write_text("key_without_section = 1\n")
        assert run_cli("cost", "--config", str(cfg_path), "--out", str(tmp_path / "o")) == 2
        assert "error:" in capsys.readouterr().err

    def test_save_load_save_is_byte_stable(self, tmp_path):
        cfg = RunConfig()
        cfg.set("trainer", "method", "sgmd")
        cfg.set("trainer", "lambda", "0.1")
        cfg.set("global", "seed", "3")
        cfg.set("teacher", "weights", "0.5,0.5;1.0")
        p1, p2 = tmp_path / "a.cfg", tmp_path / "b.cfg"
        save_resolved(cfg, p1)
        save_resolved(load_config(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_comments_and_blank_lines_ignored(self, tmp_path):
        cfg_path = tmp_path / "c.cfg"
        cfg_path.write_text("# a comment\n\n[global]\n# another\nseed = 9\n")
        assert load_config(cfg_path).get("global", "seed") == "9"


class TestSeedEnvFallback:
    def test_env_var_used_when_no_flag_or_config(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DISTILL_LAB_SEED", "123")
        out = tmp_path / "env"
        assert run_cli("toy1d", "--objective", "fisher", "--steps", "0", "--out", str(out)) == 0
        assert read_report(out)["seed"] == 123

    def test_flag_beats_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DISTILL_LAB_SEED", "123")
        out = tmp_path / "flag"
        assert run_cli(
            "toy1d", "--objective", "fisher", "--steps", "0", "--seed", "4", "--out", str(out)
        ) == 0
        assert read_report(out)["seed"] == 4
