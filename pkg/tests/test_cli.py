import csv

import numpy as np
import pytest

from conftest import file_digest, tree_digest, two_tone
from karma.cli import main
from karma.dataset import write_generic_csv, write_manifest
from karma.neural import load_model
from karma.synthetic import FLEET_THETAS, analytic_eol, synthetic_fleet

TRAIN_FLAGS = ["--epochs", "3", "--kmax", "3"]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _summary(path):
    out = {}
    for line in path.read_text().splitlines():
        if " = " in line:
            k, v = line.split(" = ", 1)
            out[k] = v
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """Fleet directory plus a briefly trained model for S4."""
    root = tmp_path_factory.mktemp("fleet")
    entries = {}
    for s in synthetic_fleet(noise=0.0):
        write_generic_csv(s, root / f"{s.battery_id}.csv")
        entries[s.battery_id] = (f"{s.battery_id}.csv", 2.0)
    write_manifest(root / "fleet.ini", entries)
    out = root / "model"
    assert main(["train", "--manifest", str(root / "fleet.ini"), "--test-id", "S4", "--sp", "60",
                 "--epochs", "40", "--out", str(out)]) == 0
    return root, out / "model.kmdl"


# -- decompose ---------------------------------------------------------------------

def _two_tone_csv(path):
    x = two_tone()
    with open(path, "w") as fh:
        fh.write("sample,value\n")
        for i, v in enumerate(x):
            fh.write(f"{i},{float(v)!r}\n")
    return path


def test_decompose_two_tone(tmp_path):
    src = _two_tone_csv(tmp_path / "tone.csv")
    out = tmp_path / "out"
    assert main(["decompose", str(src), "--kmax", "2", "--tau", "1", "--tol", "1e-9", "--max-iters", "2000",
                 "--out", str(out)]) == 0
    assert sorted(p.name for p in out.glob("mode_*.csv")) == ["mode_0.csv", "mode_1.csv"]
    text = (out / "summary.txt").read_text().splitlines()
    table = text[text.index("mode,omega,zcr,band") + 1:]
    omegas = [float(r.split(",")[1]) for r in table]
    assert len(omegas) == 2
    np.testing.assert_allclose(omegas, [0.02, 0.25], rtol=0.05)
    modes = [np.array([float(r["value"]) for r in _rows(out / f"mode_{i}.csv")]) for i in range(2)]
    assert np.linalg.norm(modes[0] + modes[1] - two_tone()) <= 1e-2 * np.linalg.norm(two_tone())


def test_decompose_manifest_auto_tune_deterministic(fleet_dir, tmp_path):
    before = tree_digest(fleet_dir)
    args = ["decompose", "--manifest", str(fleet_dir / "fleet.ini"), "--battery", "S1", "--auto-tune",
            "--seed", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    after = tree_digest(fleet_dir)
    assert {k: after[k] for k in before} == before


def test_decompose_missing_file(tmp_path, capsys):
    assert main(["decompose", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")]) == 1
    assert "nope.csv" in capsys.readouterr().err


def test_decompose_unknown_battery(fleet_dir, tmp_path):
    assert main(["decompose", "--manifest", str(fleet_dir / "fleet.ini"), "--battery", "X",
                 "--out", str(tmp_path)]) == 1


# -- train ---------------------------------------------------------------------------

def test_train_roundtrip_and_rerun(fleet_dir, tmp_path, capsys):
    man = str(fleet_dir / "fleet.ini")
    args = ["train", "--manifest", man, "--test-id", "S2", "--sp", "50", *TRAIN_FLAGS, "--seed", "1"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert "parameters:" in capsys.readouterr().out
    model = load_model(tmp_path / "a" / "model.kmdl")
    assert model.meta["test_id"] == "S2" and model.meta["sp"] == 50
    hist = _rows(tmp_path / "a" / "loss_history.csv")
    assert hist[0]["epoch"] == "0" and len(hist) >= 2
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")


def test_train_bad_test_id(fleet_dir, tmp_path):
    assert main(["train", "--manifest", str(fleet_dir / "fleet.ini"), "--test-id", "nope", "--sp", "50",
                 *TRAIN_FLAGS, "--out", str(tmp_path)]) == 1


# -- predict ---------------------------------------------------------------------------

def test_predict_oracle_matches_analytic(fleet_dir, tmp_path):
    out = tmp_path / "p"
    assert main(["predict", "--manifest", str(fleet_dir / "fleet.ini"), "--test-id", "S4", "--sp", "60",
                 "--predictor", "oracle", "--dump-particles", "--out", str(out)]) == 0
    summary = _summary(out / "summary.txt")
    true_eol = analytic_eol(FLEET_THETAS["S4"], 1.4)
    assert abs(int(summary["rul"]) - (true_eol - 60)) <= 2
    track = _rows(out / "prognosis.csv")
    assert int(track[0]["cycle"]) == 61
    assert len(list((out / "particles").iterdir())) == len(track) + 1
    plot = _rows(out / "plot_capacity.csv")
    assert plot[0]["mean"] == "" and plot[60]["mean"] == track[0]["mean_capacity"]


def test_predict_sp_beyond_series(fleet_dir, tmp_path):
    assert main(["predict", "--manifest", str(fleet_dir / "fleet.ini"), "--test-id", "S4", "--sp", "500",
                 "--predictor", "oracle", "--out", str(tmp_path)]) == 1


def test_predict_ci_nesting(fleet_dir, tmp_path):
    base = ["predict", "--manifest", str(fleet_dir / "fleet.ini"), "--test-id", "S3", "--sp", "50",
            "--predictor", "oracle"]
    assert main(base + ["--level", "0.95", "--out", str(tmp_path / "a")]) == 0
    assert main(base + ["--level", "0.99", "--out", str(tmp_path / "b")]) == 0
    a, b = _rows(tmp_path / "a" / "prognosis.csv"), _rows(tmp_path / "b" / "prognosis.csv")
    for ra, rb in zip(a, b):
        assert float(rb["ci_low"]) <= float(ra["ci_low"]) and float(ra["ci_high"]) <= float(rb["ci_high"])


def test_predict_with_model_deterministic(trained, tmp_path):
    root, model = trained
    args = ["predict", "--manifest", str(root / "fleet.ini"), "--test-id", "S4", "--sp", "60",
            "--model", str(model), "--particles", "200"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    assert _summary(tmp_path / "a" / "summary.txt")["terminated_by"] in ("eol_reached", "horizon_cap")


def test_predict_missing_model(fleet_dir, tmp_path):
    assert main(["predict", "--manifest", str(fleet_dir / "fleet.ini"), "--test-id", "S4", "--sp", "60",
                 "--model", str(tmp_path / "none.kmdl"), "--out", str(tmp_path)]) == 1


# -- evaluate -----------------------------------------------------------------------------

def test_evaluate_oracle(fleet_dir, tmp_path):
    assert main(["evaluate", "--manifest", str(fleet_dir / "fleet.ini"), "--test-id", "S1,S2", "--sp", "50",
                 "--predictor", "oracle", "--horizons", "1,5", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "report.csv")
    assert [(r["task"], r["battery_id"]) for r in rows] == [
        ("one_cycle", "S1"), ("one_cycle", "S2"), ("horizon_5", "S1"), ("horizon_5", "S2")]
    assert all(float(r["mae"]) == 0.0 for r in rows)


def test_evaluate_bad_horizons(fleet_dir, tmp_path):
    assert main(["evaluate", "--manifest", str(fleet_dir / "fleet.ini"), "--test-id", "S1", "--sp", "50",
                 "--predictor", "oracle", "--horizons", "0", "--out", str(tmp_path)]) == 1


def test_evaluate_horizon_sanity(trained, tmp_path):
    root, model = trained
    args = ["evaluate", "--manifest", str(root / "fleet.ini"), "--test-id", "S4", "--sp", "60",
            "--model", str(model), "--horizons", "1,5"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    rows = {r["task"]: float(r["mape_percent"]) for r in _rows(tmp_path / "a" / "report.csv")}
    # errors compound over the rollout on a monotone noiseless curve
    assert rows["horizon_5"] >= rows["one_cycle"] - 0.05
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert file_digest(tmp_path / "a" / "report.csv") == file_digest(tmp_path / "b" / "report.csv")
