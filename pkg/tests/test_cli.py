import csv
import io
import json
import subprocess
import sys

import pytest

from icsmarginal import write_long_csv
from icsmarginal.cli import run
from icsmarginal.simulate import gen_example_correlation, gen_ics_regression, gen_example_mean


def call(argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(argv, stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture
def fixture3(write_csv):
    return str(write_csv("cluster,y\n1,1\n1,3\n2,5\n"))


BASE = ["--cluster-col", "cluster", "--y-col", "y"]


def test_estimate_mean_fixture(fixture3):
    code, out, err = call(["estimate", fixture3, *BASE, "--stat", "mean", "--scheme", "ics"])
    assert code == 0, err
    report = json.loads(out)
    (row,) = report["results"]
    assert row["stat"] == "mean" and row["scheme"] == "ics" and row["value"] == 3.5
    # floats are reported to 12 significant digits
    assert row["std_error"] == float(f"{1.5 / 2**0.5:.12g}")
    assert report["input"] == {"M": 2, "N": 3, "size_distribution": {"1": 1, "2": 1}}
    assert set(report) == {"command", "input", "results", "warnings", "seed", "wall_time"}


def test_estimate_several_stats_csv(fixture3):
    code, out, _ = call(["estimate", fixture3, *BASE, "--stat", "mean", "--stat", "median",
                         "--stat", "trimmed", "--stat", "var", "--stat", "hl", "--format", "csv"])
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [r["stat"] for r in rows] == ["mean", "median", "trimmed", "var", "hl"]
    assert float(rows[0]["value"]) == 3.5
    assert float(rows[3]["value"]) == 2.75


def test_json_and_csv_agree(tmp_path):
    path = tmp_path / "d.csv"
    write_long_csv(gen_example_mean(30, 3, 9, seed=2), path)
    args = ["estimate", str(path), *BASE, "--stat", "mean", "--stat", "median"]
    js = json.loads(call(args)[1])["results"]
    rows = list(csv.DictReader(io.StringIO(call(args + ["--format", "csv"])[1])))
    for j, r in zip(js, rows):
        assert float(r["value"]) == j["value"]


def test_bivariate_stats(tmp_path):
    path = tmp_path / "b.csv"
    write_long_csv(gen_example_correlation(60, seed=1), path)
    args = ["estimate", str(path), "--cluster-col", "cluster", "--y-col", "y1", "--y2-col", "y2"]
    code, out, _ = call(args + ["--stat", "cov", "--covariance", "naive", "--stat", "corr"])
    assert code == 0
    res = json.loads(out)["results"]
    assert res[0]["scheme"] == "naive" and -1 <= res[1]["value"] <= 1
    code, _, err = call(args + ["--stat", "mean"])
    assert code == 2 and "single outcome" in err


def test_usage_errors(fixture3):
    assert call(["estimate", fixture3, *BASE, "--bogus"])[0] == 2
    assert call(["estimate", fixture3, *BASE, "--stat", "cov"])[0] == 2
    assert call(["frobnicate"])[0] == 2
    assert call([])[0] == 2


def test_data_errors(fixture3, write_csv):
    code, _, err = call(["estimate", fixture3, "--cluster-col", "cluster", "--y-col", "nope"])
    assert code == 1 and "nope" in err
    bad = str(write_csv("cluster,y\n1,x\n", "bad.csv"))
    code, _, err = call(["estimate", bad, *BASE])
    assert code == 1 and "row 2" in err
    code, _, err = call(["estimate", "/nonexistent.csv", *BASE])
    assert code == 1
    one = str(write_csv("cluster,y\n1,1\n1,2\n", "one.csv"))
    code, _, err = call(["test", one, *BASE, "--test", "sign"])
    assert code == 1 and "two clusters" in err


def test_censoring_flag(write_csv):
    path = str(write_csv("cluster,y,c\n1,1,0\n1,2,1\n2,5,0\n"))
    args = ["estimate", path, *BASE, "--censor-col", "c"]
    code, _, err = call(args)
    assert code == 1 and "censored" in err
    code, out, _ = call(args + ["--drop-censored"])
    assert code == 0 and json.loads(out)["results"][0]["value"] == 3.0


def test_tests_default_and_wcr(tmp_path):
    path = tmp_path / "t.csv"
    write_long_csv(gen_example_mean(40, 3, 9, seed=5), path)
    code, out, _ = call(["test", str(path), *BASE])
    assert code == 0
    res = json.loads(out)["results"]
    assert [r["test"] for r in res] == ["sign", "signed-rank", "t"]
    assert all(0 <= r["p_value"] <= 1 for r in res)
    code, out, err = call(["test", str(path), *BASE, "--test", "wcr", "--statistic", "signed-rank",
                           "--replicates", "200", "--seed", "4"])
    assert code == 0, err
    report = json.loads(out)
    assert report["seed"] == 4 and report["results"][0]["B"] == 200
    assert call(["test", str(path), *BASE, "--test", "sign", "--variance", "mc"])[0] == 2


def test_missing_seed_is_generated_and_printed(tmp_path):
    path = tmp_path / "t.csv"
    write_long_csv(gen_example_mean(20, 3, 9, seed=5), path)
    code, out, err = call(["test", str(path), *BASE, "--test", "wcr", "--replicates", "50"])
    assert code == 0
    seed = json.loads(out)["seed"]
    assert isinstance(seed, int) and f"--seed {seed}" in err


def test_regress_compare(tmp_path):
    path = tmp_path / "r.csv"
    write_long_csv(gen_ics_regression(300, seed=3), path)
    code, out, err = call(["regress", str(path), *BASE, "--x-col", "x", "--compare",
                           "--replicates", "1000", "--seed", "1"])
    assert code == 0, err
    report = json.loads(out)
    rows = report["results"]
    assert [r["parameter"] for r in rows] == ["(Intercept)", "x"]
    for r in rows:
        for m in ("wcr", "ols", "icswls", "huber"):
            assert f"{m}_estimate" in r and f"{m}_se" in r
        assert abs(r["wcr_estimate"] - r["icswls_estimate"]) < 3 * r["wcr_mc_se"]
    assert any("ols" in w for w in report["warnings"])
    code, out, _ = call(["regress", str(path), *BASE, "--x-col", "x", "--method", "huber", "--format", "csv"])
    assert code == 0 and out.startswith("parameter,huber_estimate,huber_se")


def test_regress_without_intercept(tmp_path):
    path = tmp_path / "r.csv"
    write_long_csv(gen_ics_regression(50, seed=3), path)
    code, out, _ = call(["regress", str(path), *BASE, "--x-col", "x", "--no-intercept"])
    assert code == 0
    assert [r["parameter"] for r in json.loads(out)["results"]] == ["x"]
    assert call(["regress", str(path), *BASE, "--no-intercept"])[0] == 2


def test_simulate_is_byte_identical(tmp_path):
    args = ["simulate", "--mechanism", "example-mean", "--M", "20", "--na", "5", "--nb", "50", "--seed", "7"]
    a, b = call(args), call(args)
    assert a[0] == 0 and a[1] == b[1]
    assert a[1].startswith("cluster,y\n")
    out = tmp_path / "sim.csv"
    assert call(args + ["--output", str(out)])[0] == 0
    assert out.read_text() == a[1]
    code, est, _ = call(["estimate", str(out), *BASE])
    assert code == 0 and json.loads(est)["input"]["M"] == 20


def test_simulate_recurrent_has_censor_column():
    code, out, _ = call(["simulate", "--mechanism", "recurrent", "--M", "3", "--gap", "fixed",
                         "--followup-c", "2.5", "--seed", "1"])
    assert code == 0
    assert out.splitlines() == [
        "cluster,y,censored",
        "1,1.0,0", "1,1.0,0", "1,0.5,1",
        "2,1.0,0", "2,1.0,0", "2,0.5,1",
        "3,1.0,0", "3,1.0,0", "3,0.5,1",
    ]


def test_simulate_sweep():
    args = ["simulate", "--mechanism", "example-mean", "--sweep", "--M-values", "10", "20",
            "--replications", "100", "--seed", "2"]
    code, out, _ = call(args)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 6 and rows[0].keys() == {"M", "estimator", "mean", "mc_se", "replications"}
    code, out, _ = call(args + ["--format", "json"])
    assert len(json.loads(out)["results"]) == 6
    assert call(args[:-4] + ["--replications", "10", "--seed", "1"])[0] == 2


def test_diagnose(tmp_path):
    path = tmp_path / "d.csv"
    write_long_csv(gen_example_mean(100, 5, 50, seed=3), path)
    code, out, _ = call(["diagnose", str(path), *BASE, "--grid", "-1", "0", "1"])
    assert code == 0
    rows = json.loads(out)["results"]
    assert [r["group"] for r in rows] == ["5", "50"]
    assert rows[0]["mean"] < 0 < rows[1]["mean"]
    assert "F(0)" in rows[0]


def test_diagnose_constant_size_warns(write_csv):
    path = str(write_csv("cluster,y\n1,1\n1,2\n2,3\n2,4\n"))
    code, out, err = call(["diagnose", path, *BASE])
    assert code == 0 and "same size" in err
    assert json.loads(out)["warnings"]


def test_non_finite_reported_as_na(write_csv):
    # two singleton clusters: the OLS residual dof is zero
    path = str(write_csv("cluster,y,x\n1,1,0\n2,3,1\n"))
    code, out, err = call(["regress", path, *BASE, "--x-col", "x", "--method", "ols"])
    assert code == 0
    report = json.loads(out)
    assert report["results"][0]["ols_se"] == "NA"
    assert any("NA" in w for w in report["warnings"])


def test_module_entry_point(fixture3):
    proc = subprocess.run(
        [sys.executable, "-m", "icsmarginal", "estimate", fixture3, *BASE],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["results"][0]["value"] == 3.5
    proc = subprocess.run([sys.executable, "-m", "icsmarginal", "estimate"], capture_output=True, text=True)
    assert proc.returncode == 2
