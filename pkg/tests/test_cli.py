import json

import numpy as np
import pytest

from amhtest.cli import build_parser, dispatch
from amhtest.simulation import StudySpec, generate, replication_rng


@pytest.fixture
def data_csv(tmp_path):
    spec = StudySpec(1, n=120, a=0.0)
    d = generate(spec, replication_rng(0, spec, 0))
    path = tmp_path / "data.csv"
    rows = ["x1,x2,y"] + [f"{float(a)!r},{float(b)!r},{float(c)!r}" for (a, b), c in zip(d.x, d.y)]
    path.write_text("\n".join(rows) + "\n")
    return path


def run(capsys, *argv):
    code = dispatch(list(argv))
    return code, capsys.readouterr()


def test_no_arguments_is_usage_error(capsys):
    assert dispatch([]) == 2


def test_unknown_command(capsys):
    assert dispatch(["frobnicate"]) == 2


@pytest.mark.parametrize("argv", [
    ["simulate", "--study", "1", "--level", "1.5"],
    ["simulate", "--study", "7"],
    ["test", "--data", "x.csv", "--model", "linear", "--tau", "2"],
    ["simulate", "--study", "1", "--a", "0,abc"],
])
def test_bad_flags(capsys, argv):
    assert dispatch(argv) == 2


def test_help_lists_defaults(capsys):
    text = build_parser().format_help()
    assert "tau=0.5" in text and "c1n=3e-4" in text and "c2n=0.8" in text
    sub = build_parser()._subparsers._group_actions[0].choices["test"].format_help()
    assert "(default: 0.5)" in sub and "(default: 0.1)" in sub


def test_fit(capsys, data_csv):
    code, out = run(capsys, "fit", "--data", str(data_csv), "--model", "exp-index")
    assert code == 0
    body = json.loads(out.out)
    assert body["converged"] and len(body["theta_hat"]) == 3 and body["columns"] == ["x1", "x2"]


def test_test_command(capsys, data_csv, tmp_path):
    dest = tmp_path / "o.json"
    code, _ = run(capsys, "test", "--data", str(data_csv), "--model", "exp-index", "--out", str(dest))
    assert code == 0
    body = json.loads(dest.read_text())
    assert body["branch"] in ("moment", "kernel") and 0 <= body["p_value"] <= 1


def test_dimension_command(capsys, data_csv):
    code, out = run(capsys, "dimension", "--data", str(data_csv), "--model", "exp-index", "--tau", "0.3")
    body = json.loads(out.out)
    assert code == 0 and len(body["eigenvalues"]) == 2 and body["tau"] == 0.3


def test_recipe(capsys, data_csv):
    code, out = run(capsys, "fit", "--data", str(data_csv), "--model", "affine", "--recipe", "square(1),product(1,2)")
    assert code == 0 and len(json.loads(out.out)["theta_hat"]) == 5


def test_missing_file_is_pipeline_error(capsys, tmp_path):
    code, out = run(capsys, "fit", "--data", str(tmp_path / "none.csv"), "--model", "linear")
    assert code == 1 and json.loads(out.out)["error"] == "FileNotFoundError"


def test_bad_cell_is_pipeline_error(capsys, tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x,y\n1,2\nnan,3\n4,5\n")
    code, out = run(capsys, "test", "--data", str(path), "--model", "linear")
    body = json.loads(out.out)
    assert code == 1 and body["error"] == "invalid_data" and "row 3" in body["message"]


def test_unknown_model(capsys, data_csv):
    code, out = run(capsys, "fit", "--data", str(data_csv), "--model", "spline")
    assert code == 1 and "spline" in json.loads(out.out)["message"]


def test_simulate_writes_table_and_sidecar(capsys, tmp_path):
    dest = tmp_path / "t.csv"
    code, _ = run(capsys, "simulate", "--study", "1", "--n", "50", "--a", "0,0.8", "--reps", "3",
                  "--threads", "1", "--out", str(dest))
    assert code == 0
    lines = dest.read_text().strip().splitlines()
    assert lines[0].startswith("study,n,p,covariance,a") and len(lines) == 3
    side = json.loads(dest.with_suffix(".json").read_text())
    assert [sum(r["q_hat_histogram"]) for r in side["rows"]] == [3, 3]


def test_simulate_reproducible(capsys):
    argv = ["simulate", "--study", "1", "--n", "50", "--a", "0.4", "--reps", "3", "--threads", "1", "--seed", "9"]
    first = run(capsys, *argv)[1].out
    assert run(capsys, *argv)[1].out == first


def test_power_curve(capsys):
    code, out = run(capsys, "power-curve", "--study", "1", "--n", "50", "--a", "0,1", "--reps", "2",
                    "--threads", "1", "--cov", "ar")
    rows = out.out.strip().splitlines()
    assert code == 0 and len(rows) == 5 and ",ar_half,T_Zh," in rows[-1]


def test_partial_ridge_override_needs_single_n(capsys):
    code, out = run(capsys, "simulate", "--study", "1", "--n", "50,60", "--c1n", "1e-3", "--reps", "1")
    assert code == 1 and "c2n" in json.loads(out.out)["message"]
