import hashlib
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from snofcert.cli import main
from snofcert.rnn import LpGrnnCell, lpgrnn_to_snof
from snofcert.snof import NonlinearitySpec, Snof

from conftest import BOILER, TOY, load_json


def run(*argv):
    return main([str(a) for a in argv])


def sha256(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_certify_lure_feasible(tmp_path):
    assert run("certify", TOY / "lure_scalar.json", "--out-dir", tmp_path, "--trials", 200) == 0
    rep = load_json(tmp_path / "certificate.json")
    assert rep["status"] == "feasible" and rep["certificate"]["verdict"] == "feasible"
    assert rep["certificate"]["lambda_max_G"] <= -1e-6 + 1e-7
    assert rep["validation"]["converged"] == 200
    assert rep["run"]["inputs"][0]["sha256"] == sha256(TOY / "lure_scalar.json")
    assert rep["run"]["options"]["eps_abs"] == 1e-5 and rep["run"]["options"]["max_iters"] == 100_000


def test_manifest_hash_covers_the_run(tmp_path):
    run("certify", TOY / "lti_stable.json", "--out-dir", tmp_path, "--trials", 10)
    r = load_json(tmp_path / "certificate.json")["run"]
    body = {k: v for k, v in r.items() if k != "manifest_sha256"}
    assert r["manifest_sha256"] == hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def test_certify_unstable_lti_is_infeasible(tmp_path):
    assert run("certify", TOY / "lti_unstable.json", "--out-dir", tmp_path) == 3
    rep = load_json(tmp_path / "certificate.json")
    assert rep["status"] == "infeasible" and rep["certificate"]["variables"] is None


def ill_posed_snof(path):
    D = np.array([[0.0, 2.0], [2.0, 0.0]])
    s = Snof(A=np.zeros((1, 1)), Bp=np.zeros((1, 2)), Bu=np.zeros((1, 0)), Cq=np.zeros((2, 1)), Dqp=D,
             Dqu=np.zeros((2, 0)), Cy=np.eye(1), Dyp=np.zeros((1, 2)), Dyu=np.zeros((1, 0)),
             nl=NonlinearitySpec.uniform("tanh", 2))
    s.to_json(path)
    return path


def test_ill_posed_exit_code(tmp_path):
    p = ill_posed_snof(tmp_path / "bad.json")
    assert run("check-wellposed", p, "--out-dir", tmp_path) == 1
    assert run("certify", p, "--out-dir", tmp_path) == 1
    assert load_json(tmp_path / "certificate.json")["status"] == "ill-posed"


def test_usage_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("certify", bad, "--out-dir", tmp_path) == 64
    assert run("certify", tmp_path / "missing.json", "--out-dir", tmp_path) == 64
    assert run("certify", TOY / "lure_scalar.json", "--eps-abs", 0, "--out-dir", tmp_path) == 64
    (tmp_path / "other.json").write_text('{"a": 1}')
    assert run("check-wellposed", tmp_path / "other.json", "--out-dir", tmp_path) == 64
    with pytest.raises(SystemExit) as err:
        run("certify")
    assert err.value.code == 64
    with pytest.raises(SystemExit) as err:
        run("frobnicate")
    assert err.value.code == 64


def test_dimension_mismatch_is_malformed_input(tmp_path):
    doc = load_json(TOY / "lure_scalar.json")
    doc["A"] = [[0.5, 0.0]]
    (tmp_path / "s.json").write_text(json.dumps(doc))
    assert run("check-wellposed", tmp_path / "s.json", "--out-dir", tmp_path) == 64


def test_boiler_check_wellposed(tmp_path):
    assert run("check-wellposed", BOILER / "loop.json", "--out-dir", tmp_path) == 0
    rep = load_json(tmp_path / "wellposed_report.json")
    assert rep["well_posed"]["det_R_is_one"] and rep["well_posed"]["method"] == "strictly-triangular"
    # the manifest and every artifact it names are hashed
    assert {p["path"].rsplit("/", 1)[-1] for p in rep["run"]["inputs"]} == {
        "loop.json", "plant.json", "controller.json", "sensor.json", "scaler.json"}


def train_args(out, *extra):
    return ("train", "--out-dir", out, "--count", 128, "--epochs", 2, "--batch", 32, *extra)


def test_training_is_bit_exact_for_a_seed(tmp_path):
    assert run(*train_args(tmp_path / "a", "--seed", 3)) == 0
    assert run(*train_args(tmp_path / "b", "--seed", 3)) == 0
    assert (tmp_path / "a" / "cell.json").read_bytes() == (tmp_path / "b" / "cell.json").read_bytes()
    lines = (tmp_path / "a" / "loss_trace.csv").read_text().splitlines()
    assert lines[0].startswith("# manifest_sha256=") and lines[1] == "epoch,rmse,best_rmse" and len(lines) == 4


def test_zero_epochs_keeps_the_initial_cell(tmp_path):
    init = LpGrnnCell.random(3, 1, rng=np.random.default_rng(0))
    init.to_json(tmp_path / "init.json")
    assert run(*train_args(tmp_path / "o", "--init", tmp_path / "init.json", "--epochs", 0)) == 0
    out = LpGrnnCell.from_json(tmp_path / "o" / "cell.json")
    for k, v in init.params().items():
        assert np.allclose(out.params()[k], v, rtol=0, atol=1e-15)


def test_diverged_training_exit_code(tmp_path):
    with np.errstate(all="ignore"):
        assert run(*train_args(tmp_path, "--lr", 1e308)) == 2
    assert load_json(tmp_path / "train_report.json")["status"] == "diverged"


def test_export_matches_library(tmp_path):
    cell = LpGrnnCell.random(3, 2, 1, rng=np.random.default_rng(5))
    cell.to_json(tmp_path / "cell.json")
    assert run("export-snof", tmp_path / "cell.json", "--out-dir", tmp_path) == 0
    got = Snof.from_json(tmp_path / "snof.json")
    want = lpgrnn_to_snof(LpGrnnCell.from_json(tmp_path / "cell.json"))
    for k, v in want.matrices().items():
        assert np.array_equal(getattr(got, k), v), k
    assert load_json(tmp_path / "export_report.json")["well_posed"]["verdict"]


def test_simulate_writes_stamped_csvs(tmp_path):
    assert run("simulate", BOILER / "loop.json", "--horizon", 120, "--out-dir", tmp_path) == 0
    rep = load_json(tmp_path / "simulation_report.json")
    stamp = f"# manifest_sha256={rep['run']['manifest_sha256']}"
    for name in ("comparison.csv", "metrics.csv", "trace.csv"):
        assert (tmp_path / name).read_text().splitlines()[0] == stamp
    assert set(rep["metrics"]) == {"y1", "y2", "y3"}


def test_analyze_gating(tmp_path):
    assert run("analyze-gating", "--probes", 5, "--segments", 200, "--out-dir", tmp_path) == 0
    rep = load_json(tmp_path / "gating_report.json")
    assert rep["tanh"]["max_asymmetry"] < 1e-8
    assert rep["hadamard"]["asymmetry_at_first_probe"] >= 0.2


@pytest.mark.skipif(shutil.which("snofcert") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["snofcert", "certify", str(TOY / "lti_unstable.json"), "--out-dir", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 3
    res = subprocess.run([sys.executable, "-m", "snofcert.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "snofcert" in res.stdout
