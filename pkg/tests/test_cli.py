"""End-to-end checks of the command-line surface."""

import json
import subprocess
import sys

import numpy as np

from zrplab.cli import main
from zrplab.environment import Environment


def run_cli(args):
    return main(list(args))


class TestEnvCommands:
    def test_gen_and_check(self, tmp_path, capsys):
        out = tmp_path / "env.csv"
        code = run_cli(
            [
                "env",
                "gen",
                "--kind",
                "sparse-defect",
                "--c",
                "0.5",
                "--q",
                "power:0.5,1,1",
                "--window",
                "-500",
                "500",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        env = Environment.load(out)
        assert env.n_sites == 1001
        report = tmp_path / "check.json"
        code = run_cli(["env", "check", str(out), "--epsilons", "0.3", "--out", str(report)])
        assert code == 0
        data = json.loads(report.read_text())
        assert "0.3" in data

    def test_gen_iid_reproducible(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            run_cli(
                [
                    "env", "gen", "--kind", "iid", "--c", "0.5",
                    "--q", "uniform:0.5,1", "--window", "-20", "20",
                    "--seed", "7", "--out", str(out),
                ]
            )
        ea, eb = Environment.load(a), Environment.load(b)
        assert np.array_equal(ea.alpha, eb.alpha)


class TestAnalyticCommand:
    def test_build_homogeneous(self, tmp_path, capsys):
        out = tmp_path / "flux.csv"
        code = run_cli(
            ["analytic", "build", "--c", "0.5", "--p", "1.0", "--q", "point:1.0",
             "--out", str(out)]
        )
        assert code == 0
        printed = capsys.readouterr().out
        assert "rho_c=1" in printed
        assert "v0=0.25" in printed
        header = json.loads((tmp_path / "flux.csv.json").read_text())
        assert header["holdsH"] is True


class TestJacksonCommand:
    def test_solve_barrier(self, tmp_path):
        env_path = tmp_path / "env.csv"
        run_cli(
            ["env", "gen", "--kind", "sparse-defect", "--c", "0.5",
             "--q", "uniform:0.5,1", "--window", "-300", "300", "--out", str(env_path)]
        )
        out = tmp_path / "traffic.csv"
        code = run_cli(
            ["jackson", "solve", "--env", str(env_path), "--p", "0.8",
             "--epsilon", "0.2", "--delta", "0.02", "--sites", "0", "--out", str(out)]
        )
        assert code == 0
        summary = json.loads(tmp_path.joinpath("traffic.json").read_text())
        assert summary["recurrent"] is True
        assert 0.5 < summary["lambda_F"]["0"] < 1.0


class TestSimCommand:
    def test_run_outputs(self, tmp_path):
        cfg = {
            "env": {"kind": "constant", "c": 0.5, "value": 1.0, "window": [-10, 30]},
            "g": {"kind": "constant-rate", "g_values": []},
            "p": 1.0,
            "horizon": 20.0,
            "seed": 5,
            "init": {"kind": "source", "x_t": 0},
            "snapshots": [10.0, 20.0],
            "currents": [{"kind": "fixed", "x0": 5}],
        }
        cfg_path = tmp_path / "sim.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / "run"
        code = run_cli(["sim", "run", "--config", str(cfg_path), "--out", str(out)])
        assert code == 0
        snaps = (out / "snapshots.csv").read_text().splitlines()
        assert snaps[0] == "time,site,occupancy"
        assert any(",inf" in line for line in snaps[1:])
        ledgers = json.loads((out / "currents.json").read_text())
        assert ledgers[0]["count"] == ledgers[0]["jump_part"] + ledgers[0]["path_part"]


class TestExpCommand:
    def test_run_and_exit_code(self, tmp_path):
        cfg = {
            "scenario": "source-hydro",
            "c": 0.5,
            "p": 1.0,
            "horizon": 150,
            "replicas": 40,
            "seed": 1,
            "env_kind": "constant",
            "observables": {"fill": 0.5, "tolerance": 0.08, "v_list": [0.49]},
        }
        cfg_path = tmp_path / "exp.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / "reports"
        code = run_cli(["exp", "run", "--config", str(cfg_path), "--out", str(out)])
        assert code == 0
        reports = json.loads((out / "reports.json").read_text())
        assert reports[0]["passed"] is True
        csv_text = (out / "reports.csv").read_text()
        assert "source_tail_mass_v_0.49" in csv_text

    def test_failing_verdict_nonzero_exit(self, tmp_path):
        cfg = {
            "scenario": "source-hydro",
            "c": 0.5,
            "p": 1.0,
            "horizon": 60,
            "replicas": 30,
            "seed": 1,
            "env_kind": "constant",
            # absurd tolerance forces a failing verdict
            "observables": {"fill": 0.5, "tolerance": 1e-9, "v_list": [0.49]},
        }
        cfg_path = tmp_path / "exp.json"
        cfg_path.write_text(json.dumps(cfg))
        code = run_cli(["exp", "run", "--config", str(cfg_path)])
        assert code == 1


class TestEntryPoint:
    def test_module_invocation(self):
        proc = subprocess.run(
            [sys.executable, "-m", "zrplab.cli", "--help"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert "env" in proc.stdout and "exp" in proc.stdout
