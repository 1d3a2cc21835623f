import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from scanfisher.cli import main
from scanfisher.fisher import read_scores
from scanfisher.util import read_json, sha256_file


def run_cli(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    code = run_cli(
        "synth", "--out", out, "--seed", 5, "--readers", 3, "--texts", 4,
        "--lines", 2, "--words-per-line", 8, "--min-fixations", 5, "--max-fixations", 8,
    )
    assert code == 0
    return out


def test_synth_emits_all_artifacts(synth_dir):
    for name in ("texts.json", "freq.tsv", "scanpaths.jsonl", "ground_truth.json"):
        assert (synth_dir / name).exists()
    truth = read_json(synth_dir / "ground_truth.json")
    assert set(truth["reader_params"]) == {"r00", "r01", "r02"}
    prov = truth["_provenance"]
    assert prov["tool"] == "scanfisher"
    assert prov["seed"] == 5
    # ground truth is hash-linked to the emitted data files
    assert prov["input_hashes"]["texts"] == sha256_file(synth_dir / "texts.json")
    assert prov["input_hashes"]["scanpaths"] == sha256_file(synth_dir / "scanpaths.jsonl")
    rows = (synth_dir / "scanpaths.jsonl").read_text().strip().splitlines()
    assert len(rows) == 3 * 4 * 2


def test_synth_seed_reproducible(tmp_path, synth_dir):
    again = tmp_path / "again"
    assert run_cli(
        "synth", "--out", again, "--seed", 5, "--readers", 3, "--texts", 4,
        "--lines", 2, "--words-per-line", 8, "--min-fixations", 5, "--max-fixations", 8,
    ) == 0
    for name in ("texts.json", "freq.tsv", "scanpaths.jsonl", "ground_truth.json"):
        assert (again / name).read_bytes() == (synth_dir / name).read_bytes()


@pytest.fixture(scope="module")
def fitted_model(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit") / "model.json"
    code = run_cli(
        "fit",
        "--texts", synth_dir / "texts.json",
        "--freq", synth_dir / "freq.tsv",
        "--scanpaths", synth_dir / "scanpaths.jsonl",
        "--out", out,
        "--reg-lambda", 0.01,
    )
    assert code == 0
    return out


def test_fit_emits_valid_model_and_log(fitted_model):
    payload = read_json(fitted_model)
    pi = np.array(payload["pi"])
    assert pi.shape == (5,)
    assert pi.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(pi >= 0)
    assert payload["M"] == len(payload["feature_layout"])
    assert "norm_stats" in payload
    log = read_json(str(fitted_model) + ".log.json")
    assert len(log["groups"]) == 10
    for group in log["groups"]:
        assert group["final_objective"] <= group["initial_objective"] + 1e-9


def test_fit_lambda_changes_weights(synth_dir, tmp_path):
    out0 = tmp_path / "m0.json"
    out1 = tmp_path / "m1.json"
    for out, lam in ((out0, "0"), (out1, "0.01")):
        assert run_cli(
            "fit", "--texts", synth_dir / "texts.json", "--freq", synth_dir / "freq.tsv",
            "--scanpaths", synth_dir / "scanpaths.jsonl", "--out", out, "--lambda", lam,
        ) == 0
    a = read_json(out0)
    b = read_json(out1)
    assert a["alpha"] != b["alpha"]


def test_fit_rerun_byte_identical(synth_dir, tmp_path, fitted_model):
    out = tmp_path / "model2.json"
    assert run_cli(
        "fit", "--texts", synth_dir / "texts.json", "--freq", synth_dir / "freq.tsv",
        "--scanpaths", synth_dir / "scanpaths.jsonl", "--out", out, "--reg-lambda", 0.01,
    ) == 0
    assert out.read_bytes() == Path(fitted_model).read_bytes()


@pytest.fixture(scope="module")
def scores_file(synth_dir, fitted_model, tmp_path_factory):
    out = tmp_path_factory.mktemp("score") / "scores.txt"
    code = run_cli(
        "score", "--model", fitted_model,
        "--texts", synth_dir / "texts.json", "--freq", synth_dir / "freq.tsv",
        "--scanpaths", synth_dir / "scanpaths.jsonl", "--out", out,
    )
    assert code == 0
    return out


def test_score_matrix_shape(scores_file, fitted_model):
    scores = read_scores(scores_file)
    payload = read_json(fitted_model)
    d = 5 * (1 + 4 * payload["M"])
    assert scores.shape == (24, d)
    meta = read_json(str(scores_file) + ".meta.json")
    assert len(meta["instances"]) == 24
    assert {i["reader_id"] for i in meta["instances"]} == {"r00", "r01", "r02"}


def test_kernel_and_train_svm(scores_file, tmp_path):
    gram_path = tmp_path / "gram.csv"
    assert run_cli("kernel", "--scores", scores_file, "--out", gram_path) == 0
    lines = gram_path.read_text().strip().splitlines()
    assert lines[0].startswith("# provenance:")
    gram = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    assert gram.shape == (24, 24)
    np.testing.assert_allclose(gram, gram.T, atol=1e-12)
    metric = read_json(str(gram_path) + ".metric.json")
    assert metric["n_instances"] == 24

    svm_path = tmp_path / "svm.json"
    assert run_cli(
        "train-svm", "--scores", scores_file, "--meta", str(scores_file) + ".meta.json",
        "--out", svm_path, "--C", 1.0,
    ) == 0
    payload = read_json(svm_path)
    assert payload["classes"] == ["r00", "r01", "r02"]
    for model in payload["models"]:
        assert model["C"] == 1.0
        assert len(model["alphas"]) == len(model["support"])
    assert payload["references"]["scores"] == sha256_file(scores_file)


def test_identify_pipeline(synth_dir, tmp_path, capsys):
    out = tmp_path / "report"
    code = run_cli(
        "identify",
        "--texts", synth_dir / "texts.json", "--freq", synth_dir / "freq.tsv",
        "--scanpaths", synth_dir / "scanpaths.jsonl", "--out", out,
        "--lambda-grid", "0.01", "--c-grid", "1", "--ridge-grid", "1e-6",
        "--inner-folds", "1", "--no-elimination",
    )
    assert code == 0
    payload = read_json(out / "report.json")
    assert payload["mode"] == "identification"
    assert len(payload["folds"]) == 4
    assert (out / "report.csv").exists()
    assert "accuracy" in capsys.readouterr().out


def test_report_subcommand(synth_dir, tmp_path, capsys):
    out = tmp_path / "report"
    run_cli(
        "identify",
        "--texts", synth_dir / "texts.json", "--freq", synth_dir / "freq.tsv",
        "--scanpaths", synth_dir / "scanpaths.jsonl", "--out", out,
        "--lambda-grid", "0.01", "--c-grid", "1", "--ridge-grid", "1e-6",
        "--inner-folds", "1", "--no-elimination", "--no-baseline",
    )
    capsys.readouterr()
    assert run_cli("report", "--report", out / "report.json") == 0
    assert "identification" in capsys.readouterr().out


def test_comprehend_pipeline(synth_dir, tmp_path, capsys):
    # relabel the synthetic scanpaths with a binary class per (reader, text)
    rows = (synth_dir / "scanpaths.jsonl").read_text().strip().splitlines()
    labeled = tmp_path / "labeled.jsonl"
    out_rows = []
    for row in rows:
        obj = json.loads(row)
        obj["label"] = (int(obj["reader_id"][1:]) + int(obj["text_id"][1:])) % 2
        out_rows.append(json.dumps(obj, sort_keys=True))
    labeled.write_text("\n".join(out_rows) + "\n")

    out = tmp_path / "report"
    code = run_cli(
        "comprehend",
        "--texts", synth_dir / "texts.json", "--freq", synth_dir / "freq.tsv",
        "--scanpaths", labeled, "--out", out,
        "--lambda-grid", "0.01", "--c-grid", "1", "--ridge-grid", "1e-6",
        "--no-elimination",
    )
    assert code == 0
    payload = read_json(out / "report.json")
    assert payload["mode"] == "comprehension"
    assert len(payload["folds"]) == 4
    assert payload["majority_mean_accuracy"] is not None
    assert "auc" in capsys.readouterr().out


def test_parse_error_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code = run_cli(
        "fit", "--texts", bad, "--freq", bad, "--scanpaths", bad, "--out", tmp_path / "m.json",
    )
    assert code == 2


def test_fit_failure_exit_code(synth_dir, tmp_path):
    # scanpaths too short to produce events: fit fails with exit 3
    sp_path = tmp_path / "short.jsonl"
    sp_path.write_text(json.dumps({
        "reader_id": "r00", "text_id": "t00", "line_id": 0, "fixations": [[0, 100.0]],
    }) + "\n")
    code = run_cli(
        "fit", "--texts", synth_dir / "texts.json", "--freq", synth_dir / "freq.tsv",
        "--scanpaths", sp_path, "--out", tmp_path / "m.json",
    )
    assert code == 3


def test_cli_entry_point_via_module():
    proc = subprocess.run(
        [sys.executable, "-m", "scanfisher", "--version"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "scanfisher" in proc.stdout
