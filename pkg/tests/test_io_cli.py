import json
import subprocess
import sys

import numpy as np
import pytest

from impactsim.analysis import detect_impacts
from impactsim.cli import main
from impactsim.errors import ConfigurationError
from impactsim.io import (
    RunConfig,
    read_impacts_csv,
    read_trajectory_csv,
    trajectory_header,
    write_impacts_csv,
    write_trajectory_csv,
)
from impactsim.models import build_model
from impactsim.scheme import SchemeConfig, run

BALL = {"model": {"name": "bouncing_ball", "params": {"e": 0.5}}, "scheme": {"h": 1e-3, "t_end": 1.0}}


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def ball_traj(h=1e-3, t_end=1.0):
    m = build_model("bouncing_ball")
    return m, run(m.initial, SchemeConfig(h=h, e=m.e, t_end=t_end), m.force, m.metric, m.constraint)


class TestCsv:
    def test_trajectory_round_trip_is_exact(self, tmp_path):
        m = build_model("variable_mass", {"damping": 1.0})
        tr = run(m.initial, SchemeConfig(h=1e-3, e=m.e, t_end=0.5), m.force, m.metric, m.constraint)
        path = tmp_path / "t.csv"
        write_trajectory_csv(path, tr)
        back = read_trajectory_csv(path, h=tr.h)
        for name in ("t", "u", "v", "phi", "energy", "reaction_norm", "active", "fp_iters"):
            assert np.array_equal(getattr(back, name), getattr(tr, name)), name

    def test_header(self, tmp_path):
        _, tr = ball_traj()
        path = tmp_path / "t.csv"
        write_trajectory_csv(path, tr)
        assert path.read_text().splitlines()[0] == ",".join(trajectory_header(1))
        assert trajectory_header(2)[:5] == ["t", "u_1", "u_2", "v_1", "v_2"]

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("t,x\n0,1\n")
        with pytest.raises(ConfigurationError):
            read_trajectory_csv(path)

    def test_impacts_round_trip(self, tmp_path):
        m, tr = ball_traj()
        events = detect_impacts(tr, m.constraint, m.metric)
        path = tmp_path / "i.csv"
        write_impacts_csv(path, events, 1)
        back = read_impacts_csv(path)
        assert np.array_equal(back["t"], [ev.t for ev in events])
        assert np.array_equal(back["measured_e"], [ev.measured_e for ev in events])


class TestRunConfig:
    def test_round_trip(self):
        rc = RunConfig.from_dict(BALL)
        assert RunConfig.loads(rc.dumps()) == rc
        assert RunConfig.loads(rc.dumps()).dumps() == rc.dumps()

    @pytest.mark.parametrize(
        "patch, key",
        [
            ({"colour": 1}, "colour"),
            ({"scheme": {"h": 1e-3}}, "scheme.t_end"),
            ({"scheme": {"h": "fast", "t_end": 1.0}}, "scheme.h"),
            ({"scheme": {"h": 1e-3, "t_end": 1.0, "order": 2}}, "scheme.order"),
            ({"outputs": {"plot": "x.png"}}, "outputs.plot"),
            ({"converge": {"reference": "exact"}}, "converge.reference"),
            ({"oracle": "yes"}, "oracle"),
            ({"model": {"params": {}}}, "model.name"),
        ],
    )
    def test_errors_name_the_key(self, patch, key):
        raw = dict(BALL)
        raw.update(patch)
        with pytest.raises(ConfigurationError, match=key.replace(".", r"\.")):
            RunConfig.from_dict(raw)

    def test_invalid_json(self):
        with pytest.raises(ConfigurationError, match="JSON"):
            RunConfig.loads("{not json")


class TestCli:
    def test_run_writes_artifacts(self, tmp_path, capsys):
        cfg = dict(BALL, oracle=True)
        out = tmp_path / "out"
        assert main(["run", "--config", write_config(tmp_path, cfg), "--out-dir", str(out)]) == 0
        tr = read_trajectory_csv(out / "trajectory.csv")
        assert np.all(np.diff(tr.t) > 0)
        np.testing.assert_allclose(np.diff(tr.t), 1e-3, rtol=1e-9)
        assert read_impacts_csv(out / "impacts.csv")["t"].size >= 1
        assert (out / "oracle.csv").exists()

    def test_global_flags_before_subcommand(self, tmp_path):
        out = tmp_path / "o"
        assert main(["--config", write_config(tmp_path, BALL), "--out-dir", str(out), "--quiet", "run"]) == 0
        assert (out / "trajectory.csv").exists()

    def test_bad_restitution_exit_1(self, tmp_path, capsys):
        cfg = {"model": {"name": "bouncing_ball", "params": {"e": 1.5}}, "scheme": {"h": 1e-3, "t_end": 1.0}}
        assert main(["run", "--config", write_config(tmp_path, cfg), "--out-dir", str(tmp_path)]) == 1
        assert "restitution" in capsys.readouterr().err

    def test_missing_config_exit_1(self, capsys):
        assert main(["run"]) == 1
        assert "--config" in capsys.readouterr().err

    def test_picard_divergence_exit_2_keeps_partial(self, tmp_path, capsys):
        cfg = {"model": {"name": "variable_mass", "params": {"damping": 10.0}}, "scheme": {"h": 0.5, "t_end": 5.0}}
        out = tmp_path / "o"
        assert main(["run", "--config", write_config(tmp_path, cfg), "--out-dir", str(out)]) == 2
        assert "step 1" in capsys.readouterr().err
        assert len(read_trajectory_csv(out / "trajectory.csv", h=0.5)) == 1

    def test_converge(self, tmp_path):
        cfg = dict(BALL, converge={"h_values": [4e-3, 2e-3, 1e-3], "t_end": 1.2})
        out = tmp_path / "o"
        assert main(["converge", "--config", write_config(tmp_path, cfg), "--out-dir", str(out)]) == 0
        header = (out / "convergence.csv").read_text().splitlines()[0]
        assert header == "h,sup_err,impact_time_err,measured_e_err"
        summary = (out / "convergence.txt").read_text()
        order = float(summary.split("observed_order:")[1].split()[0])
        assert order >= 0.8

    def test_converge_finest_grid_flag(self, tmp_path):
        cfg = {
            "model": {"name": "disk_billiard", "params": {"e": 0.5}},
            "scheme": {"h": 1e-3, "t_end": 1.5},
            "converge": {"h_values": [4e-3, 2e-3, 1e-3]},
        }
        assert main(["converge", "--config", write_config(tmp_path, cfg), "--out-dir", str(tmp_path), "--quiet"]) == 0
        assert "reference: finest-grid" in (tmp_path / "convergence.txt").read_text()

    def test_converge_single_h_exit_1(self, tmp_path, capsys):
        cfg = dict(BALL, converge={"h_values": [1e-3]})
        assert main(["converge", "--config", write_config(tmp_path, cfg), "--out-dir", str(tmp_path)]) == 1
        assert "at least 3" in capsys.readouterr().err

    def test_lemma_check(self, capsys):
        assert main(["lemma-check", "--count", "200", "--seed", "4"]) == 0
        first = capsys.readouterr().out
        assert main(["lemma-check", "--count", "200", "--seed", "4"]) == 0
        assert capsys.readouterr().out == first

    def test_lemma_check_zero_count(self):
        assert main(["lemma-check", "--count", "0"]) == 1

    def test_models_lists_all(self, capsys):
        assert main(["models"]) == 0
        out = capsys.readouterr().out
        for name in ("bouncing_ball", "disk_billiard", "variable_mass", "oblique_wall"):
            assert name in out

    def test_unknown_subcommand(self):
        assert main(["simulate"]) == 1

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "impactsim", "models"], capture_output=True, text=True)
        assert proc.returncode == 0 and "bouncing_ball" in proc.stdout
