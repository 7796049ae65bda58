"""Command-line workflows: exit codes, manifests, and byte-level reruns."""

import filecmp
import json

import numpy as np
import pytest

from masscast import cli
from masscast.cli import main


def _run(argv):
    try:
        return main(argv)
    except SystemExit as exc:  # argparse usage failures
        return exc.code


@pytest.fixture()
def synth_dir(tmp_path):
    data = tmp_path / "data"
    rc = _run([
        "synth", "--out", str(data), "--recordings", "6",
        "--width", "320", "--height", "180", "--seed", "0",
    ])
    assert rc == 0
    return data


def _extract(data, out):
    return _run(["extract", "--recordings", str(data), "--out", str(out)])


# ---------------------------------------------------------------------------
# exit codes


def test_usage_error_exits_1(capsys):
    assert _run(["train", "--mode", "final"]) == 1  # missing required args
    assert _run(["frobnicate"]) == 1
    assert _run([]) == 1


def test_missing_recordings_dir_exits_2(tmp_path, capsys):
    rc = _run([
        "extract", "--recordings", str(tmp_path / "nope"),
        "--out", str(tmp_path / "p.bin"),
    ])
    assert rc == 2
    assert "error" in capsys.readouterr().err


def test_bad_spec_json_exits_2(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"recordings": 2, "bogus_field": 1}))
    rc = _run(["synth", "--out", str(tmp_path / "d"), "--spec", str(spec)])
    assert rc == 2


def test_gradcheck_failure_exits_3(monkeypatch, capsys):
    monkeypatch.setattr(cli, "run_layer_suite", lambda **kw: {"conv3x3": 1.0})
    monkeypatch.setattr(cli, "finite_difference_check", lambda seed: 2.0)
    assert _run(["gradcheck", "--seeds", "1"]) == 3


def test_gradcheck_success_exits_0(monkeypatch, capsys):
    monkeypatch.setattr(cli, "run_layer_suite", lambda **kw: {"conv3x3": 1e-9})
    monkeypatch.setattr(cli, "finite_difference_check", lambda seed: 1e-6)
    assert _run(["gradcheck", "--seeds", "1"]) == 0
    out = capsys.readouterr().out
    assert str(532_764) in out


# ---------------------------------------------------------------------------
# seed resolution


def test_env_seed_matches_flag(tmp_path, monkeypatch):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert _run(["synth", "--out", str(a), "--recordings", "2",
                 "--width", "320", "--height", "180", "--seed", "4"]) == 0
    monkeypatch.setenv("MASSCAST_SEED", "4")
    assert _run(["synth", "--out", str(b), "--recordings", "2",
                 "--width", "320", "--height", "180"]) == 0
    assert filecmp.cmp(a / "truth.csv", b / "truth.csv", shallow=False)


def test_env_seed_must_be_integer(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("MASSCAST_SEED", "forty-two")
    rc = _run(["synth", "--out", str(tmp_path / "d"), "--recordings", "2",
               "--width", "320", "--height", "180"])
    assert rc == 2


# ---------------------------------------------------------------------------
# extract


def test_extract_writes_archive_and_manifest(synth_dir, tmp_path, capsys):
    out = tmp_path / "patches.bin"
    assert _extract(synth_dir, out) == 0
    assert out.exists()
    manifest = json.loads((tmp_path / "patches.bin.manifest.json").read_text())
    assert manifest["command"] == "extract"
    assert any(k.endswith("patches.bin") for k in manifest["outputs"])
    text = capsys.readouterr().out
    assert "recordings" in text


def test_extract_rerun_is_byte_identical(synth_dir, tmp_path):
    a = tmp_path / "a.bin"
    b = tmp_path / "b.bin"
    assert _extract(synth_dir, a) == 0
    assert _extract(synth_dir, b) == 0
    assert a.read_bytes() == b.read_bytes()


def test_extract_warns_on_empty_recording(synth_dir, tmp_path, capsys):
    # blank one recording's detections; extract still succeeds with a warning
    victim = sorted(p.parent for p in synth_dir.glob("*/meta.txt"))[0]
    (victim / "detections.jsonl").write_text("")
    out = tmp_path / "patches.bin"
    assert _extract(synth_dir, out) == 0
    assert "no candidates" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# train / predict / score


@pytest.fixture()
def trained(synth_dir, tmp_path):
    patches = tmp_path / "patches.bin"
    assert _extract(synth_dir, patches) == 0
    model = tmp_path / "model.bin"
    rc = _run([
        "train", "--patches", str(patches), "--mode", "final",
        "--out", str(model), "--epochs", "2", "--batch", "4", "--seed", "0",
    ])
    assert rc == 0
    return model


def test_train_final_writes_model_and_manifest(trained, tmp_path):
    assert trained.exists()
    manifest = json.loads(
        (trained.parent / "model.bin.manifest.json").read_text()
    )
    assert manifest["command"] == "train"
    assert manifest["config"]["mode"] == "final"


def test_predict_then_score(trained, synth_dir, tmp_path, capsys):
    pred = tmp_path / "pred.csv"
    rc = _run([
        "predict", "--model", str(trained), "--recordings", str(synth_dir),
        "--out", str(pred),
    ])
    assert rc == 0
    lines = pred.read_text().splitlines()
    assert lines[0] == "recording_id,mass_g"
    assert len(lines) == 7  # header + 6 recordings

    report = tmp_path / "report.txt"
    rc = _run([
        "score", "--pred", str(pred), "--truth", str(synth_dir / "truth.csv"),
        "--out", str(report),
    ])
    assert rc == 0
    assert report.exists()
    kv = dict(
        line.split("=", 1)
        for line in (tmp_path / "report.kv").read_text().splitlines()
    )
    assert "score_total" in kv
    assert 0.0 <= float(kv["score_total"]) <= 100.0


def test_predict_rerun_is_byte_identical(trained, synth_dir, tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    for out in (a, b):
        rc = _run([
            "predict", "--model", str(trained), "--recordings", str(synth_dir),
            "--out", str(out),
        ])
        assert rc == 0
    assert a.read_bytes() == b.read_bytes()


def test_train_rerun_is_byte_identical(synth_dir, tmp_path):
    patches = tmp_path / "patches.bin"
    assert _extract(synth_dir, patches) == 0
    models = []
    for name in ("m1.bin", "m2.bin"):
        model = tmp_path / name
        rc = _run([
            "train", "--patches", str(patches), "--mode", "final",
            "--out", str(model), "--epochs", "2", "--batch", "4", "--seed", "9",
        ])
        assert rc == 0
        models.append(model.read_bytes())
    assert models[0] == models[1]


def test_train_cv3_writes_fold_artifacts(tmp_path):
    data = tmp_path / "data"
    rc = _run([
        "synth", "--out", str(data), "--recordings", "9", "--pool", "3",
        "--width", "320", "--height", "180", "--seed", "1",
    ])
    assert rc == 0
    patches = tmp_path / "patches.bin"
    assert _extract(data, patches) == 0
    out = tmp_path / "cv"
    rc = _run([
        "train", "--patches", str(patches), "--mode", "cv3",
        "--catalog", str(data / "catalog.csv"),
        "--out", str(out), "--epochs", "1", "--batch", "4", "--seed", "0",
    ])
    assert rc == 0
    for i in (1, 2, 3):
        assert (out / f"model_fold{i}.bin").exists()
        assert (out / f"predictions_fold{i}.csv").exists()
        assert (out / f"report_fold{i}.kv").exists()
    assert (out / "report.kv").exists()
    assert (out / "report.txt").exists()
    assert (out / "run_manifest.json").exists()


def test_train_cv3_requires_catalog(synth_dir, tmp_path, capsys):
    patches = tmp_path / "patches.bin"
    assert _extract(synth_dir, patches) == 0
    rc = _run([
        "train", "--patches", str(patches), "--mode", "cv3",
        "--out", str(tmp_path / "cv"), "--epochs", "1",
    ])
    assert rc == 2


def test_score_mismatched_ids_exit_2(trained, synth_dir, tmp_path, capsys):
    pred = tmp_path / "pred.csv"
    pred.write_text("recording_id,mass_g\nsynthXXXX,50.0\n")
    rc = _run([
        "score", "--pred", str(pred), "--truth", str(synth_dir / "truth.csv"),
        "--out", str(tmp_path / "r.txt"),
    ])
    assert rc == 2
