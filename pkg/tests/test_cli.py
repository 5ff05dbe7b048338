import json
import subprocess
import sys

import numpy as np
import pytest

from spherecov.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, _parse_grid, main
from spherecov.fields import Dataset
from spherecov.gram import build_J, nnz_fraction
from spherecov.kernels import matern_zonal


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def simulate(*extra):
    return main(["simulate", "--n", "8", "--r", "4", "--out", "d.csv", *extra])


class TestSimulate:
    def test_defaults(self, workdir):
        assert main(["simulate"]) == EXIT_OK
        meta = json.loads((workdir / "dataset.json").read_text())
        assert meta["n"] == 64 and meta["r_list"] == [12] * 64 and meta["sigma"] == 0.1
        assert (workdir / "dataset_model.json").exists()

    def test_noise_free(self, workdir):
        assert simulate("--sigma", "0") == EXIT_OK
        assert json.loads((workdir / "d.json").read_text())["sigma"] == 0.0

    def test_far1_flag(self, workdir):
        assert simulate("--far1", "0.5") == EXIT_OK
        assert Dataset.load(workdir / "d.csv").time_ordered

    def test_far1_invalid(self, workdir):
        assert simulate("--far1", "1.0") == EXIT_CONFIG
        assert not (workdir / "d.csv").exists()

    def test_deterministic_bytes(self, workdir):
        main(["simulate", "--n", "5", "--r", "3", "--seed", "9", "--out", "a.csv"])
        main(["simulate", "--n", "5", "--r", "3", "--seed", "9", "--out", "b.csv"])
        assert (workdir / "a.csv").read_bytes() == (workdir / "b.csv").read_bytes()

    def test_config_file_and_override(self, workdir):
        (workdir / "cfg.json").write_text(json.dumps({"n": 3, "r": 5, "sigma": 0.2}))
        assert main(["--config", "cfg.json", "simulate", "--r", "2", "--out", "c.csv"]) == EXIT_OK
        meta = json.loads((workdir / "c.json").read_text())
        assert meta["n"] == 3 and meta["r_list"] == [2, 2, 2] and meta["sigma"] == 0.2

    def test_missing_config(self, workdir):
        assert main(["--config", "nope.json", "simulate"]) == EXIT_CONFIG

    def test_bad_flag(self, workdir):
        assert main(["simulate", "--bogus"]) == EXIT_CONFIG


class TestFit:
    def test_outputs_and_report(self, workdir):
        simulate()
        assert main(["fit", "--data", "d.csv", "--eta", "2.363"]) == EXIT_OK
        report = json.loads((workdir / "fit_report.json").read_text())
        for key in ("j_nnz_fraction", "khatri_rao_nnz", "dimensions", "fit_seconds", "iterations"):
            assert key in report
        assert report["dimensions"] == {"khatri_rao": 128, "L": 96}
        data = Dataset.load(workdir / "d.csv")
        J = build_J(data.locations, matern_zonal(), 0.01)
        assert report["j_nnz_fraction"] == pytest.approx(nnz_fraction(J), rel=1e-12)
        for stem in ("fit_R", "fit_mean"):
            assert (workdir / f"{stem}.json").exists() and (workdir / f"{stem}.csv").exists()

    def test_lag_dispatch(self, workdir):
        simulate("--far1", "0.5")
        assert main(["fit", "--data", "d.csv", "--lag", "1", "--out", "lag"]) == EXIT_OK
        assert json.loads((workdir / "lag_R.json").read_text())["lag"] == 1
        rows = np.loadtxt(workdir / "lag_R.csv", delimiter=",", ndmin=2)
        assert rows.shape[0] == 7 * 16

    def test_missing_data_file(self, workdir):
        assert main(["fit", "--data", "missing.csv"]) == EXIT_IO

    def test_missing_data_flag(self, workdir):
        assert main(["fit"]) == EXIT_CONFIG

    def test_bad_eta(self, workdir):
        simulate()
        assert main(["fit", "--data", "d.csv", "--eta", "-1"]) == EXIT_CONFIG

    def test_numeric_failure_rolls_back(self, workdir):
        simulate()
        code = main(["fit", "--data", "d.csv", "--eta", "1e-6", "--max-iter", "1", "--tol", "1e-14"])
        assert code == EXIT_NUMERIC
        assert not list(workdir.glob("fit_*"))


class TestCV:
    def test_singleton_grid(self, workdir):
        simulate()
        assert main(["cv", "--data", "d.csv", "--eta-grid", "2.0"]) == EXIT_OK
        report = json.loads((workdir / "cv_cv.json").read_text())
        assert report["selected_eta"] == 2.0

    def test_one_fold_rejected(self, workdir):
        simulate()
        assert main(["cv", "--data", "d.csv", "--folds", "1"]) == EXIT_CONFIG

    def test_decreasing_grid_rejected(self, workdir):
        simulate()
        assert main(["cv", "--data", "d.csv", "--eta-grid", "3,1"]) == EXIT_CONFIG

    def test_deterministic(self, workdir):
        simulate()
        main(["cv", "--data", "d.csv", "--eta-grid", "1:3:3", "--out", "a"])
        main(["cv", "--data", "d.csv", "--eta-grid", "1:3:3", "--out", "b"])
        assert (workdir / "a_cv.json").read_bytes() == (workdir / "b_cv.json").read_bytes()


class TestEval:
    def test_with_truth_and_projection(self, workdir):
        simulate()
        main(["fit", "--data", "d.csv"])
        code = main(["eval", "--estimate", "fit_R", "--truth", "d_model.json", "--grid-size", "50",
                     "--project-psd"])
        assert code == EXIT_OK
        report = json.loads((workdir / "grid_eval.json").read_text())
        assert report["l2_error"] > 0 and report["clipped_mass"] >= 0
        values = np.loadtxt(workdir / "grid_values.csv", delimiter=",")
        assert values.shape == (50, 50)

    def test_zero_estimate(self, workdir):
        simulate("--sigma", "0")
        data = Dataset.load(workdir / "d.csv")
        Dataset(data.locations, [np.zeros(4)] * 8).save(workdir / "z.csv")
        main(["fit", "--data", "z.csv", "--out", "zero"])
        assert main(["eval", "--estimate", "zero_R", "--grid-size", "20"]) == EXIT_OK
        assert not np.loadtxt(workdir / "grid_values.csv", delimiter=",").any()

    def test_covariance_with_mean(self, workdir):
        simulate()
        main(["fit", "--data", "d.csv"])
        assert main(["eval", "--estimate", "fit_R", "--mean", "fit_mean", "--grid-size", "20"]) == EXIT_OK
        assert json.loads((workdir / "grid_eval.json").read_text())["covariance"] is True

    def test_missing_estimate(self, workdir):
        assert main(["eval", "--estimate", "nothing"]) == EXIT_IO

    def test_small_grid_rejected(self, workdir):
        simulate()
        main(["fit", "--data", "d.csv"])
        assert main(["eval", "--estimate", "fit_R", "--grid-size", "1"]) == EXIT_CONFIG


@pytest.mark.parametrize("text,expected", [
    ("1:6:11", tuple(np.linspace(1, 6, 11))),
    ("log:0.01:1:3", (0.01, 0.1, 1.0)),
    ("1,2.5", (1.0, 2.5)),
])
def test_parse_grid(text, expected):
    np.testing.assert_allclose(_parse_grid(text), expected)


def test_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "spherecov.cli", "simulate", "--n", "2", "--r", "2",
                           "--out", str(tmp_path / "x.csv")], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["n_samples"] == 4
