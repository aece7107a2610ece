import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from regimefit import cli, mda, rhlp
from regimefit.bench import read_report


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def signal(tmp_path):
    assert cli.main(["simulate", "--preset", "situation1", "--n", "200", "--seed", "3",
                     "--output-dir", str(tmp_path / "sim")]) == 0
    return tmp_path / "sim" / "signal.csv"


def test_simulate_outputs_and_determinism(tmp_path):
    args = ["simulate", "--preset", "situation1", "--level", "8", "--n", "700", "--sigma", "1", "--seed", "7"]
    assert cli.main(args + ["--output-dir", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--output-dir", str(tmp_path / "b")]) == 0
    for name in ("signal.csv", "truth.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    truth = rows(tmp_path / "a" / "truth.csv")
    assert len(truth) == 700 and set(truth[0]) == {"t", "true_label", "true_mean"}
    assert {r["true_label"] for r in truth} == {"1", "2", "3"}


def test_simulate_errors(tmp_path, capsys):
    assert cli.main(["simulate", "--level", "11", "--output-dir", str(tmp_path)]) == 2
    assert cli.main(["simulate", "--preset", "situation9", "--output-dir", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "situation1" in err and "situation2" in err


def test_fit_rhlp(tmp_path, signal):
    before = signal.read_bytes()
    out = tmp_path / "fit"
    assert cli.main(["fit", "--model", "rhlp", "--k", "3", "--p", "0", "--q", "1",
                     "--input", str(signal), "--output-dir", str(out)]) == 0
    assert signal.read_bytes() == before
    labels = [int(r["z_hat"]) for r in rows(out / "labels.csv")]
    runs = [k for i, k in enumerate(labels) if i == 0 or k != labels[i - 1]]
    assert len(runs) == 3
    prop = rows(out / "proportions.csv")
    assert abs(sum(float(prop[10][f"pi_{k}"]) for k in (1, 2, 3)) - 1.0) < 1e-12
    model = json.loads((out / "model.json").read_text())
    assert model["model_type"] == "rhlp" and model["K"] == 3
    rhlp.RhlpModel.from_dict(model)


def test_fit_pwr_single_segment(tmp_path, signal):
    out = tmp_path / "fit"
    assert cli.main(["fit", "--model", "pwr", "--k", "1", "--p", "2",
                     "--input", str(signal), "--output-dir", str(out)]) == 0
    den = rows(out / "denoised.csv")
    t = np.array([float(r["t"]) for r in den])
    x = np.array([float(r["x"]) for r in den])
    x_hat = np.array([float(r["x_hat"]) for r in den])
    assert np.allclose(x_hat, np.polyval(np.polyfit(t, x, 2), t))
    assert not (out / "proportions.csv").exists()


def test_fit_hmrm(tmp_path, signal):
    out = tmp_path / "fit"
    assert cli.main(["fit", "--model", "hmrm", "--k", "3", "--p", "0", "--viterbi",
                     "--input", str(signal), "--output-dir", str(out)]) == 0
    assert json.loads((out / "model.json").read_text())["model_type"] == "hmrm"


def test_missing_input_leaves_no_outputs(tmp_path):
    out = tmp_path / "never"
    assert cli.main(["fit", "--input", str(tmp_path / "absent.csv"), "--output-dir", str(out)]) == 2
    assert not out.exists()


def test_malformed_input_names_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,x\n0,1\n0.5,2\n1,x\n")
    assert cli.main(["fit", "--input", str(bad), "--output-dir", str(tmp_path / "o")]) == 2
    assert "line 4" in capsys.readouterr().err


def test_infeasible_hyperparameters(tmp_path, capsys, signal):
    assert cli.main(["fit", "--model", "pwr", "--k", "150", "--p", "2", "--input", str(signal),
                     "--output-dir", str(tmp_path / "o")]) == 2
    assert "k(p+2)" in capsys.readouterr().err


def test_computation_failure_exit_code(tmp_path, signal, monkeypatch):
    def boom(*a, **k):
        raise FloatingPointError("diverged")

    monkeypatch.setattr(cli.rhlp, "fit_em", boom)
    assert cli.main(["fit", "--input", str(signal), "--output-dir", str(tmp_path / "o")]) == 1
    assert not (tmp_path / "o").exists()


def test_usage_error_exit_code():
    assert cli.main(["fit", "--model", "spline"]) == 2
    assert cli.main([]) == 2


def test_config_file_and_override(tmp_path, signal):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": "pwr", "k": 2, "p": 0, "input": str(signal)}))
    out = tmp_path / "o"
    assert cli.main(["--config", str(cfg), "fit", "--k", "3", "--output-dir", str(out)]) == 0
    model = json.loads((out / "model.json").read_text())
    assert model["model_type"] == "pwr" and model["K"] == 3
    cfg.write_text(json.dumps({"model": "pwr", "colour": "red"}))
    assert cli.main(["--config", str(cfg), "fit", "--input", str(signal), "--output-dir", str(out)]) == 2


def test_bundled_spec_row_count(tmp_path):
    assert "smoothness_sit1" in cli.bundled_specs()
    spec = cli.load_spec("smoothness_sit1")
    assert len(spec.grid) * len(spec.models) == 30


def test_benchmark_quick_and_deterministic(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"experiment": "noise", "grid": [1.0, 2.0], "n": 100, "replicates": 2}))
    base = ["benchmark", "--spec", str(spec), "--replicates", "1", "--restarts", "1", "--seed", "4"]
    assert cli.main(base + ["--output-dir", str(tmp_path / "a")]) == 0
    assert cli.main(base + ["--jobs", "2", "--output-dir", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "noise_situation1.csv").read_bytes()
    assert a == (tmp_path / "b" / "noise_situation1.csv").read_bytes()
    assert len(read_report(tmp_path / "a" / "noise_situation1.csv")) == 6
    assert cli.main(["benchmark", "--spec", "nonexistent_spec"]) == 2


def test_classify_train_predict(tmp_path):
    rng = np.random.default_rng(0)
    Y = np.vstack([rng.normal(c, 0.2, size=(15, 3)) for c in (0.0, 5.0, -5.0)])
    labels = np.repeat([1, 2, 3], 15)
    mda.write_features(tmp_path / "train.jsonl", Y, labels)
    assert cli.main(["classify", "train", "--input", str(tmp_path / "train.jsonl"),
                     "--output-dir", str(tmp_path)]) == 0
    assert cli.main(["classify", "predict", "--input", str(tmp_path / "train.jsonl"),
                     "--classifier", str(tmp_path / "classifier.json"), "--output-dir", str(tmp_path)]) == 0
    pred = rows(tmp_path / "predictions.csv")
    assert [int(r["class"]) for r in pred] == list(labels)
    for r in pred:
        assert abs(sum(float(r[f"posterior_{g}"]) for g in (1, 2, 3)) - 1.0) < 1e-12
    doc = json.loads((tmp_path / "classifier.json").read_text())
    assert doc["G"] == 3 and len(doc["classes"]) == 3 and {"R", "alpha", "mu", "Sigma"} <= set(doc["classes"][0])


def test_classify_errors(tmp_path, capsys):
    feats = tmp_path / "f.jsonl"
    mda.write_features(feats, np.zeros((4, 2)) + np.arange(4)[:, None], [1, 1, 2, 2])
    assert cli.main(["classify", "predict", "--input", str(feats),
                     "--classifier", str(tmp_path / "missing.json")]) == 2
    assert cli.main(["classify", "train", "--input", str(feats), "--output-dir", str(tmp_path)]) == 0
    wide = tmp_path / "wide.jsonl"
    mda.write_features(wide, np.zeros((2, 5)))
    capsys.readouterr()
    assert cli.main(["classify", "predict", "--input", str(wide),
                     "--classifier", str(tmp_path / "classifier.json"), "--output-dir", str(tmp_path)]) == 2
    assert "dimension" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "regimefit.cli", "simulate", "--n", "20", "--output-dir", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert (tmp_path / "signal.csv").exists()
