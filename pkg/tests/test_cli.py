import contextlib
import io
import os

import numpy as np
import pytest

from neopain import cli
from neopain.autodiff import save_tensor
from neopain.checkpoint import load_checkpoint, save_checkpoint
from neopain.data import read_manifest
from conftest import cli_ok as ok, run_cli

TINY = ["--input-size", "64", "--augment-frames", "2"]


@pytest.fixture(scope="session")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    ok("synth", "--out", root / "fx", "--subjects", 3, "--max-events", 12, "--seed", 3)
    ok("preprocess", "--manifest", root / "fx" / "manifest.tsv", "--out", root / "pre")
    ok("features", "--clips", root / "pre" / "clips.tsv", "--out", root / "feat", "--single-stream", *TINY)
    return root


def test_synth_seed7_has_187_events(tmp_path):
    (rec,) = ok("synth", "--seed", 7, "--out", tmp_path)
    assert rec["events"] == 187 and (rec["pain"], rec["no_pain"]) == (101, 86)
    assert len(read_manifest(tmp_path / "manifest.tsv")) == 187


def test_train_bilinear_writes_checkpoint(tiny, tmp_path):
    records = ok("train-bilinear", "--features", tiny / "feat", "--out", tmp_path / "ck", "--max-epochs", 2)
    assert [r["epoch"] for r in records if "epoch" in r] == [1, 2]
    kind, config, state = load_checkpoint(tmp_path / "ck")
    assert kind == "bilinear" and config["train"]["max_epochs"] == 2
    assert any(k.startswith("backbone.") for k in state) and any(k.startswith("head.") for k in state)


def test_train_lstm_and_predict(tiny, tmp_path):
    ok("train-lstm", "--features", tiny / "feat", "--out", tmp_path / "ck", "--max-epochs", 2)
    clip = np.random.default_rng(0).random((32, 64, 64, 3))
    save_tensor(tmp_path / "clip.bten", clip)
    (rec,) = ok("predict", "--checkpoint", tmp_path / "ck", "--clip", tmp_path / "clip.bten")
    values = rec["intensity"]
    assert len(values) == 32 and all(0.0 <= v <= 7.0 for v in values)


@pytest.mark.parametrize("stage", ["train-lstm", "train-bilinear"])
def test_predict_zero_checkpoint_zero_clip(tiny, tmp_path, stage):
    ok(stage, "--features", tiny / "feat", "--out", tmp_path / "ck", "--max-epochs", 1)
    kind, config, state = load_checkpoint(tmp_path / "ck")
    save_checkpoint(tmp_path / "zero", {k: np.zeros_like(v) for k, v in state.items()}, kind, config)
    save_tensor(tmp_path / "clip.bten", np.zeros((32, 64, 64, 3)))
    (rec,) = ok("predict", "--checkpoint", tmp_path / "zero", "--clip", tmp_path / "clip.bten")
    assert rec["intensity"] == [0.0] * 32


def test_evaluate_loso_emits_fold_metrics(tiny, tmp_path):
    records = ok("evaluate", "--features", tiny / "feat", "--protocol", "loso", "--max-epochs", 1,
                 "--out", tmp_path / "ev")
    folds = {r["fold"] for r in records}
    assert folds == {"S01", "S02", "S03", "mean"}
    mean = [r for r in records if r["fold"] == "mean"]
    assert {r["variant"] for r in mean} == {"per_timestep", "per_event_mean"}
    assert all(r["folds"] == 3 for r in mean)
    assert os.path.isfile(tmp_path / "ev" / "metrics.jsonl") and os.path.isfile(tmp_path / "ev" / "history.jsonl")


def test_evaluate_split_bilinear(tiny):
    records = ok("evaluate", "--features", tiny / "feat", "--protocol", "split", "--stage", "bilinear",
                 "--input", "single-stream", "--max-epochs", 1)
    assert {r["fold"] for r in records} == {"split", "mean"}


def test_train_is_deterministic(tiny, tmp_path):
    a = ok("train-bilinear", "--features", tiny / "feat", "--out", tmp_path / "a", "--max-epochs", 2)
    b = ok("train-bilinear", "--features", tiny / "feat", "--out", tmp_path / "b", "--max-epochs", 2)
    assert a == b
    for name in sorted(os.listdir(tmp_path / "a")):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_config_file_sets_defaults_and_flags_override(tiny, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# tiny budget\nmax_epochs = 1\nlearning-rate=0.001\n")
    records = ok("train-bilinear", "--config", cfg, "--features", tiny / "feat", "--out", tmp_path / "a")
    assert max(r["epoch"] for r in records if "epoch" in r) == 1
    _, config, _ = load_checkpoint(tmp_path / "a")
    assert config["train"]["learning_rate"] == 0.001
    records = ok("train-bilinear", "--config", cfg, "--features", tiny / "feat", "--out", tmp_path / "b",
                 "--max-epochs", 2)
    assert max(r["epoch"] for r in records if "epoch" in r) == 2


@pytest.mark.parametrize("text", ["max_epochs\n", "no_such_key=1\n", "precision=float16\n", "max_epochs=abc\n"])
def test_bad_config_is_usage_error(tmp_path, text):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    code, _, err = run_cli("train-lstm", "--config", cfg, "--features", tmp_path, "--out", tmp_path / "o")
    assert code == 2 and err


@pytest.mark.parametrize("argv", [
    ["synth"],
    ["synth", "--out", "x", "--bogus"],
    ["frobnicate"],
    ["preprocess", "--manifest", "/nonexistent/manifest.tsv", "--out", "x"],
    ["predict", "--checkpoint", "/nonexistent", "--clip", "/nonexistent"],
    ["synth", "--out", "x", "--config", "/nonexistent.cfg"],
    ["synth", "--out", "x", "--jobs", "0"],
])
def test_usage_errors_exit_2(argv):
    code, records, _ = run_cli(*argv)
    assert code == 2 and records == []


def test_validation_failure_exit_1(tmp_path):
    (tmp_path / "manifest.tsv").write_text("not a manifest\n")
    code, _, err = run_cli("preprocess", "--manifest", tmp_path / "manifest.tsv", "--out", tmp_path / "o")
    assert code == 1 and "invalid input" in err


def test_predict_rejects_bad_clip(tiny, tmp_path):
    ok("train-lstm", "--features", tiny / "feat", "--out", tmp_path / "ck", "--max-epochs", 1)
    save_tensor(tmp_path / "clip.bten", np.full((32, 64, 64, 3), 2.0))
    code, _, err = run_cli("predict", "--checkpoint", tmp_path / "ck", "--clip", tmp_path / "clip.bten")
    assert code == 1 and "[0, 1]" in err


def test_help_prints_defaults(capsys):
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args(["train-lstm", "--help"])
    out = capsys.readouterr().out
    assert "default: 0.0001" in out and "default: 150" in out and "default: 16" in out


def test_main_help_exit_zero():
    with contextlib.redirect_stdout(io.StringIO()) as out:
        assert cli.main(["--help"]) == 0
    assert "predict" in out.getvalue()
