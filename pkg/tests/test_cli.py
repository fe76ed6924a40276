import json

import numpy as np
import pytest

from arcshoot import problems as P
from arcshoot.arc_structure import write_trajectory_csv
from arcshoot.cli import main
from arcshoot.shooting import gauss_newton, load_omega


def run(args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def solved_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("solved")
    code = run(["solve", "--problem", "regulator", "--structure", "B-,C,S",
                "--tau", "1.25,2.55", "--init", "analytic", "--steps", "333",
                "--out", out])
    assert code == 0
    return out


class TestSolve:
    def test_outputs_and_report(self, solved_dir):
        report = json.loads((solved_dir / "report.json").read_text())
        assert report["converged"] is True
        assert report["validation"]["passed"] is True
        assert abs(report["cost"] - 0.3925013) < 1e-4
        assert abs(report["tau"][0] - 1.2) < 1e-6
        assert {"trajectory.csv", "omega.json", "report.json"} <= {
            p.name for p in solved_dir.iterdir()
        }

    def test_trajectory_header(self, solved_dir):
        first = (solved_dir / "trajectory.csv").read_text().splitlines()[0]
        assert first == "arc,k,s,t,u,x1,x2,x3,p1,p2,p3"

    def test_deterministic_outputs(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run(["solve", "--problem", "regulator", "--structure", "B-,C,S",
                        "--init", "analytic", "--steps", "120", "--out", out]) == 0
            outs.append(out)
        assert (outs[0] / "trajectory.csv").read_bytes() == (outs[1] / "trajectory.csv").read_bytes()
        assert (outs[0] / "report.json").read_bytes() == (outs[1] / "report.json").read_bytes()

    def test_round_trip_warm_start(self, solved_dir, regulator):
        struct, omega, meta = load_omega(solved_dir / "omega.json")
        _, report = gauss_newton(regulator, struct, omega, steps=meta["steps"])
        assert report.n_iter <= 2

    def test_toy_bang(self, tmp_path):
        out = tmp_path / "tb"
        assert run(["solve", "--problem", "toy-bang", "--structure", "B-",
                    "--init", "analytic", "--out", out]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["gauss_newton"]["final_residual"] <= 1e-12
        assert report["cost"] == -1.0

    def test_config_file_with_flag_override(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "problem": "toy-bang", "structure": "B-", "init": "analytic",
            "out": str(tmp_path / "ignored"),
        }))
        out = tmp_path / "flagged"
        assert run(["solve", "--config", cfg, "--out", out]) == 0
        assert (out / "report.json").exists()
        assert not (tmp_path / "ignored").exists()

    def test_unknown_problem_exits_1(self, tmp_path):
        assert run(["solve", "--problem", "nope", "--structure", "B-",
                    "--init", "analytic", "--out", tmp_path]) == 1

    def test_invalid_structure_exits_1(self, tmp_path):
        assert run(["solve", "--problem", "regulator", "--structure", "B-,B-",
                    "--init", "analytic", "--out", tmp_path]) == 1

    def test_analytic_init_structure_mismatch_exits_1(self, tmp_path):
        assert run(["solve", "--problem", "regulator", "--structure", "S",
                    "--init", "analytic", "--out", tmp_path]) == 1


class TestDetect:
    def test_from_csv(self, tmp_path, regulator):
        t, u, x = P.sample_regulator(800)
        csv_path = tmp_path / "traj.csv"
        write_trajectory_csv(csv_path, t, u, x)
        out = tmp_path / "det"
        assert run(["detect", "--problem", "regulator", "--from-csv", csv_path,
                    "--out", out]) == 0
        doc = json.loads((out / "structure.json").read_text())
        assert doc["kinds"] == ["B-", "C", "S"]
        assert abs(doc["tau"][0] - 1.2) <= 0.01 and abs(doc["tau"][1] - 2.6) <= 0.01

    def test_empty_csv_fails(self, tmp_path):
        csv_path = tmp_path / "empty.csv"
        csv_path.write_text("t,u,x1,x2,x3\n")
        assert run(["detect", "--problem", "regulator", "--from-csv", csv_path,
                    "--out", tmp_path]) == 1


class TestVerify:
    def test_toy_bang_vacuous_pass(self, tmp_path):
        out = tmp_path / "tb"
        assert run(["solve", "--problem", "toy-bang", "--structure", "B-",
                    "--init", "analytic", "--out", out]) == 0
        assert run(["verify", "--problem", "toy-bang", "--omega", out / "omega.json",
                    "--nodes", "40", "--out", out]) == 0
        doc = json.loads((out / "positivity.json").read_text())
        assert doc["pass"] is True and doc["nullspace_dim"] == 0

    def test_regulator_reports_certificate(self, tmp_path, solved_dir):
        out = tmp_path / "ver"
        code = run(["verify", "--problem", "regulator",
                    "--omega", solved_dir / "omega.json", "--nodes", "80",
                    "--out", out])
        doc = json.loads((out / "positivity.json").read_text())
        # The junction-shift null direction keeps the margin-based pass off;
        # the raw smallest eigenvalue sits at the discretization floor.
        assert code == 2 and doc["pass"] is False
        assert doc["goh_asymmetry"] <= 1e-10
        assert doc["nullspace_dim"] > 0

    def test_missing_omega_exits_1(self, tmp_path):
        assert run(["verify", "--problem", "regulator",
                    "--omega", tmp_path / "none.json", "--out", tmp_path]) == 1
