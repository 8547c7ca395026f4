import csv
import json
import math
import shutil
from pathlib import Path

import numpy as np
import pytest

from optinsure import cli

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def run(*args):
    return cli.main(list(args))


def scenario(n):
    return str(SCENARIOS / f"example{n}.json")


def write_config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


class TestSolve:
    def test_example1(self, tmp_path):
        assert run("solve", "--config", scenario(1), "--out", str(tmp_path)) == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert abs(report["m_star"] - 3.0) <= 1e-6
        assert 25 <= report["iterations"] <= 60
        trace = json.loads((tmp_path / "trace.json").read_text())
        assert len(trace["iterations"]) == report["iterations"]
        with open(tmp_path / "indemnity.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["x", "indemnity", "retained"]
        for x, y, r in rows[1:]:
            assert float(r) == float(x) - float(y)

    def test_report_fields_finite(self, tmp_path):
        assert run("solve", "--config", scenario(2), "--out", str(tmp_path)) == 0
        report = json.loads((tmp_path / "report.json").read_text())

        def walk(v):
            if isinstance(v, dict):
                for item in v.values():
                    walk(item)
            elif isinstance(v, list):
                for item in v:
                    walk(item)
            elif isinstance(v, float):
                assert math.isfinite(v)

        walk(report)
        assert "wall_time" not in report

    def test_example3_slopes(self, tmp_path):
        assert run("solve", "--config", scenario(3), "--out", str(tmp_path)) == 0
        data = np.loadtxt(tmp_path / "indemnity.csv", delimiter=",", skiprows=1)
        x, y = data[:, 0], data[:, 1]
        slopes = np.diff(y) / np.diff(x)
        d = 2.0 * math.log(1.2288484153376)
        segments = []
        for s, xm in zip(slopes, 0.5 * (x[1:] + x[:-1])):
            if xm <= d:
                continue
            label = 0 if abs(s) < 1e-9 else (1 if abs(s - 1.0) < 1e-6 else None)
            assert label is not None, f"slope {s} at {xm}"
            if not segments or segments[-1] != label:
                segments.append(label)
        assert segments == [1, 0, 1, 0, 1]

    def test_env_output_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.ENV_OUTPUT_ROOT, str(tmp_path))
        assert run("solve", "--config", scenario(1)) == 0
        assert (tmp_path / "example1" / "report.json").exists()

    def test_overrides(self, tmp_path):
        assert run("solve", "--config", scenario(2), "--out", str(tmp_path), "--tol", "1e-6", "--m0", "1.5") == 0
        trace = json.loads((tmp_path / "trace.json").read_text())
        assert trace["m0"] == 1.5
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["scenario"]["solver"]["m_tolerance"] == 1e-6

    def test_deterministic(self, tmp_path):
        for sub in ("a", "b"):
            assert run("solve", "--config", scenario(3), "--out", str(tmp_path / sub)) == 0
        for name in ("trace.json", "indemnity.csv", "report.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestExitCodes:
    def test_malformed_json(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{"name": "x",\n')
        assert run("solve", "--config", str(path)) == cli.EXIT_CONFIG
        assert "line" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert run("solve", "--config", str(tmp_path / "nope.json")) == cli.EXIT_CONFIG

    def test_bad_m0_flag(self, tmp_path):
        assert run("solve", "--config", scenario(1), "--out", str(tmp_path), "--m0", "sideways") == cli.EXIT_CONFIG

    def test_no_convergence(self, tmp_path):
        data = json.loads(Path(scenario(1)).read_text())
        data["solver"] = {"max_iterations": 3}
        assert run("solve", "--config", write_config(tmp_path, data), "--out", str(tmp_path)) == cli.EXIT_NO_CONVERGENCE

    def test_divergent_upper_endpoint(self, tmp_path):
        assert run("solve", "--config", scenario(1), "--out", str(tmp_path), "--m0", "upper") == cli.EXIT_QUADRATURE

    def test_quadrature_budget(self, tmp_path):
        data = json.loads(Path(scenario(2)).read_text())
        data["solver"] = {"quadrature": {"refinement_limit": 1, "order": 3}}
        assert run("solve", "--config", write_config(tmp_path, data), "--out", str(tmp_path)) == cli.EXIT_QUADRATURE

    def test_no_oracle(self, tmp_path):
        data = {"name": "emp", "distribution": {"family": "empirical", "atoms": [[1, 0.5], [2, 0.5]]},
                "premium": {"family": "quadratic", "alpha": 0.5}, "gamma": 1.0}
        assert run("compare", "--config", write_config(tmp_path, data), "--out", str(tmp_path)) == cli.EXIT_NO_ORACLE

    def test_oracle_flag_mismatch(self, tmp_path):
        data = json.loads(Path(scenario(1)).read_text())
        data["compare"]["oracle"] = "quadratic"
        assert run("compare", "--config", write_config(tmp_path, data), "--out", str(tmp_path)) == cli.EXIT_NO_ORACLE

    def test_help_lists_codes(self, capsys):
        with pytest.raises(SystemExit):
            run("verify", "--help")
        out = capsys.readouterr().out
        for code in range(2, 11):
            assert f"\n  {code} " in out


class TestVerify:
    def test_example1_all_pass(self, tmp_path):
        assert run("solve", "--config", scenario(1), "--out", str(tmp_path)) == 0
        assert run("verify", "--config", scenario(1), "--out", str(tmp_path)) == 0
        result = json.loads((tmp_path / "verify.json").read_text())
        assert result["passed"]
        names = {c["name"] for c in result["checks"]}
        assert {"comonotone", "first_order", "self_consistency", "perturbation", "curve_comonotone"} <= names

    def test_example2_oracle_delta(self, tmp_path):
        assert run("verify", "--config", scenario(2), "--out", str(tmp_path)) == 0
        result = json.loads((tmp_path / "verify.json").read_text())
        oracle = next(c for c in result["checks"] if c["name"] == "oracle_curve")
        assert oracle["max_delta"] <= 1e-5

    def test_hand_edited_curve(self, tmp_path):
        assert run("solve", "--config", scenario(1), "--out", str(tmp_path)) == 0
        path = tmp_path / "indemnity.csv"
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        mid = len(rows) // 2
        rows[mid][1] = repr(float(rows[mid][1]) - 0.5)
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
        assert run("verify", "--config", scenario(1), "--out", str(tmp_path)) == cli.EXIT_COMONOTONE

    def test_seed_override_recorded(self, tmp_path):
        assert run("verify", "--config", scenario(1), "--out", str(tmp_path), "--seed", "17") == 0
        result = json.loads((tmp_path / "verify.json").read_text())
        pert = next(c for c in result["checks"] if c["name"] == "perturbation")
        assert pert["seed"] == 17


class TestCompare:
    @pytest.mark.parametrize("n,target,tol", [(1, 3.0, 1e-6), (2, 5.4214, 1e-4), (3, 1.2288, 1e-4)])
    def test_examples(self, tmp_path, n, target, tol):
        assert run("compare", "--config", scenario(n), "--out", str(tmp_path)) == 0
        summary = json.loads((tmp_path / "compare.json").read_text())
        assert abs(summary["m_star"] - target) <= tol
        assert summary["curve_max_delta"] <= 1e-5 and summary["passed"]
        assert (tmp_path / "compare.csv").exists() and (tmp_path / "oracle_indemnity.csv").exists()

    def test_tolerance_failure(self, tmp_path):
        data = json.loads(Path(scenario(1)).read_text())
        data["compare"]["reference_m"] = 3.1
        assert run("compare", "--config", write_config(tmp_path, data), "--out", str(tmp_path)) == cli.EXIT_ORACLE_DELTA
        assert not json.loads((tmp_path / "compare.json").read_text())["passed"]
