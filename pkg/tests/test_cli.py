import json
import os

import numpy as np
import pytest

from explvar.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def write_regression_csv(path, n=120, p=10, r2=0.5, seed=0, noiseless=False, shuffle_seed=None):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    alpha = np.zeros(p)
    alpha[: p // 2] = np.sqrt(r2 / (p // 2))
    eps = 0.0 if noiseless else rng.standard_normal(n) * np.sqrt(1 - r2)
    y = x @ alpha + eps
    if shuffle_seed is not None:
        y = np.random.default_rng(shuffle_seed).permutation(y)
    header = "y," + ",".join(f"x{j}" for j in range(p))
    body = "\n".join(",".join(f"{v:.17g}" for v in (y[i], *x[i])) for i in range(n))
    path.write_text(header + "\n" + body + "\n")
    return str(path)


class TestEstimateCommand:
    def test_noiseless_ls_degenerate_interval(self, tmp_path, capsys):
        path = write_regression_csv(tmp_path / "d.csv", noiseless=True)
        code, out, _ = run_cli(capsys, "estimate", "--input", path, "--outcome", "y",
                               "--method", "ee-ls", "--variance", "normal",
                               "--level", "0.95,0.5")
        assert code == 0
        rep = json.loads(out)
        assert abs(rep["estimate"]["r2"] - 1.0) < 1e-10
        for iv in rep["intervals"]:
            assert abs(iv["lower"] - 1.0) < 1e-9 and abs(iv["upper"] - 1.0) < 1e-9

    def test_default_method_by_shape(self, tmp_path, capsys):
        path = write_regression_csv(tmp_path / "d.csv", n=120, p=10)
        code, out, _ = run_cli(capsys, "estimate", "--input", path, "--outcome", "y")
        assert code == 0 and json.loads(out)["meta"]["method"] == "ee-ls"
        path2 = write_regression_csv(tmp_path / "w.csv", n=30, p=40)
        code, out, _ = run_cli(capsys, "estimate", "--input", path2, "--outcome", "y")
        assert code == 0 and json.loads(out)["meta"]["method"] == "ee-lambda"

    def test_json_round_trip_byte_identical(self, tmp_path, capsys):
        path = write_regression_csv(tmp_path / "d.csv")
        _, out, _ = run_cli(capsys, "estimate", "--input", path, "--outcome", "y")
        rep = json.loads(out)
        assert json.dumps(rep, indent=2, sort_keys=True) == out.strip()

    def test_deterministic_across_runs(self, tmp_path, capsys):
        path = write_regression_csv(tmp_path / "d.csv")
        _, out1, _ = run_cli(capsys, "estimate", "--input", path, "--outcome", "y",
                             "--method", "trans-ee")
        _, out2, _ = run_cli(capsys, "estimate", "--input", path, "--outcome", "y",
                             "--method", "trans-ee")
        assert out1 == out2

    def test_shuffled_outcome_interval_contains_zero(self, tmp_path, capsys):
        hits = 0
        shuffles = 20
        for s in range(shuffles):
            path = write_regression_csv(tmp_path / f"s{s}.csv", n=120, p=10,
                                        shuffle_seed=1000 + s)
            code, out, _ = run_cli(capsys, "estimate", "--input", path, "--outcome", "y",
                                   "--method", "ee-ls", "--variance", "robust")
            assert code == 0
            iv = json.loads(out)["intervals"][0]
            hits += iv["lower"] <= 0.0 <= iv["upper"]
        assert hits >= 0.9 * shuffles

    def test_interactions_flag(self, tmp_path, capsys):
        path = write_regression_csv(tmp_path / "d.csv", n=60, p=4)
        code, out, _ = run_cli(capsys, "estimate", "--input", path, "--outcome", "y",
                               "--interactions")
        assert code == 0
        assert json.loads(out)["meta"]["p"] == 4 + 6

    def test_log_covariates_requires_positive(self, tmp_path, capsys):
        path = write_regression_csv(tmp_path / "d.csv")
        code, _, err = run_cli(capsys, "estimate", "--input", path, "--outcome", "y",
                               "--log-covariates")
        assert code == 2
        assert "strictly positive" in err

    def test_missing_file_exit_2(self, capsys):
        code, _, err = run_cli(capsys, "estimate", "--input", "/no/such.csv", "--outcome", "y")
        assert code == 2 and "cannot read" in err

    def test_bad_cell_exit_2(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("y,x\n1,2\n3,oops\n4,5\n6,7\n")
        code, _, err = run_cli(capsys, "estimate", "--input", str(path), "--outcome", "y")
        assert code == 2 and "oops" in err

    def test_trans_ee_wide_design_exit_2(self, tmp_path, capsys):
        path = write_regression_csv(tmp_path / "w.csv", n=30, p=40)
        code, _, err = run_cli(capsys, "estimate", "--input", path, "--outcome", "y",
                               "--method", "trans-ee")
        assert code == 2 and "n > p" in err

    def test_csv_and_text_formats(self, tmp_path, capsys):
        path = write_regression_csv(tmp_path / "d.csv")
        code, out, _ = run_cli(capsys, "estimate", "--input", path, "--outcome", "y",
                               "--format", "csv", "--level", "0.9,0.95")
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0].startswith("n,p,method")
        assert len(lines) == 3  # header + one row per level
        code, out, _ = run_cli(capsys, "estimate", "--input", path, "--outcome", "y",
                               "--format", "text")
        assert code == 0 and "explained variation estimate" in out

    def test_outcome_by_index(self, tmp_path, capsys):
        path = write_regression_csv(tmp_path / "d.csv")
        code, out, _ = run_cli(capsys, "estimate", "--input", path, "--outcome", "0")
        assert code == 0 and json.loads(out)["meta"]["p"] == 10


class TestSimulateCommand:
    SCENARIO = """
n = 40
p = 8
r2_true = 0.25
replicates = {reps}
seed = 7
methods = ee-ls:robust:0.95
"""

    def test_minimal_scenario_one_row_csv(self, tmp_path, capsys):
        scen = tmp_path / "mini.scenario"
        scen.write_text(self.SCENARIO.format(reps=1))
        code, out, err = run_cli(capsys, "simulate", str(scen), "--format", "csv")
        assert code == 0
        lines = out.strip().splitlines()
        assert len(lines) == 2  # header + one (scenario, method) row
        assert (tmp_path / "mini_report.json").exists()
        assert (tmp_path / "mini_report.csv").exists()

    def test_json_report_round_trips(self, tmp_path, capsys):
        scen = tmp_path / "mini.scenario"
        scen.write_text(self.SCENARIO.format(reps=3))
        code, out, _ = run_cli(capsys, "simulate", str(scen))
        assert code == 0
        on_disk = (tmp_path / "mini_report.json").read_text()
        assert json.dumps(json.loads(on_disk), indent=2, sort_keys=True) + "\n" == on_disk

    def test_malformed_key_exit_2(self, tmp_path, capsys):
        scen = tmp_path / "bad.scenario"
        scen.write_text(self.SCENARIO.format(reps=1) + "\nwidgets = 3\n")
        code, _, err = run_cli(capsys, "simulate", str(scen))
        assert code == 2 and "widgets" in err

    def test_failure_gate_exit_3(self, tmp_path, capsys):
        scen = tmp_path / "fail.scenario"
        scen.write_text("n = 9\np = 8\nr2_true = 0.2\nreplicates = 4\nseed = 1\n"
                        "methods = ee-ls:normal:0.95\n")
        code, _, err = run_cli(capsys, "simulate", str(scen))
        assert code == 3 and "failed" in err


class TestMpCheckCommand:
    def test_deterministic(self, capsys):
        _, out1, _ = run_cli(capsys, "mp-check", "--n", "60", "--p", "60", "--seed", "5")
        _, out2, _ = run_cli(capsys, "mp-check", "--n", "60", "--p", "60", "--seed", "5")
        assert out1 == out2

    def test_wide_diagnostic_no_assertion(self, capsys):
        code, out, _ = run_cli(capsys, "mp-check", "--n", "100", "--p", "4000")
        assert code == 0
        rep = json.loads(out)
        assert rep["tau2_hat"] < 1.0 and rep["relative_gap"] >= 0.0

    def test_small_size_rejected(self, capsys):
        code, _, err = run_cli(capsys, "mp-check", "--n", "3", "--p", "10")
        assert code == 2


@pytest.mark.skipif("EXPLVAR_NHANES_CSV" not in os.environ,
                    reason="real pollutant panel not available")
class TestPollutantPanelIntegration:
    """Gated end-to-end check on the real glycohemoglobin/PCB panel.

    Point the EXPLVAR_NHANES_CSV environment variable at a CSV with the
    outcome in a column named 'y' (or set EXPLVAR_NHANES_OUTCOME) and the
    38 pollutant measurements in the remaining columns.
    """

    def test_log_scale_main_effects_band(self, capsys):
        path = os.environ["EXPLVAR_NHANES_CSV"]
        outcome = os.environ.get("EXPLVAR_NHANES_OUTCOME", "y")
        for method in ("ee-ls", "ee-lambda", "trans-ee"):
            code, out, _ = run_cli(capsys, "estimate", "--input", path,
                                   "--outcome", outcome, "--method", method,
                                   "--log-covariates")
            assert code == 0
            r2 = json.loads(out)["estimate"]["r2"]
            assert 0.13 <= r2 <= 0.15
