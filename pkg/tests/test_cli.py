"""Command line behavior: exit codes, file layout, determinism."""

import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from emg2artic.cli import main
from emg2artic.eval_metrics import REPORT_ROWS


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj))
    return path


MICRO_MODEL = {
    "config_version": 1,
    "model": {"hidden_dim": 8, "n_transformer_layers": 1, "n_heads": 2},
    "train": {"batch_size": 4, "n_epochs": 2, "learning_rate": 1e-3,
              "eval_every": 1, "seed": 7},
}


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    """Synthesized and preprocessed micro corpus shared by the module."""
    root = tmp_path_factory.mktemp("clicorpus")
    cfg = write_json(root / "synth.json", {
        "config_version": 1,
        "synth": {"n_train": 6, "n_val": 2, "n_test": 2,
                  "duration_range_s": [0.8, 1.2], "seed": 3},
    })
    out = root / "corpus"
    assert main(["synth", "--out", str(out), "--config", str(cfg)]) == 0
    assert main(["preprocess", "--corpus", str(out)]) == 0
    return out


def test_synth_writes_corpus_and_manifest(tmp_path, capsys):
    cfg = write_json(tmp_path / "s.json", {
        "config_version": 1,
        "synth": {"n_train": 1, "n_val": 1, "n_test": 1,
                  "duration_range_s": [0.5, 0.6]},
    })
    out = tmp_path / "c"
    assert main(["synth", "--out", str(out), "--config", str(cfg)]) == 0
    assert (out / "ground_truth.json").exists()
    assert (out / "train" / "utt_0000" / "emg.f32").exists()
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["command"] == "synth"
    assert "timings" in manifest and "run_id" in manifest
    assert "1 train / 1 val / 1 test" in capsys.readouterr().out


def test_synth_missing_parent_fails(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "no" / "c")]) == 1
    assert "parent directory" in capsys.readouterr().err


def test_config_rejects_unknown_section(tmp_path, capsys):
    cfg = write_json(tmp_path / "bad.json",
                     {"config_version": 1, "synt": {"n_train": 1}})
    assert main(["synth", "--out", str(tmp_path / "c"), "--config", str(cfg)]) == 1
    assert "unknown config sections" in capsys.readouterr().err


def test_config_rejects_unknown_key(tmp_path, capsys):
    cfg = write_json(tmp_path / "bad.json",
                     {"config_version": 1, "synth": {"n_trian": 2}})
    assert main(["synth", "--out", str(tmp_path / "c"), "--config", str(cfg)]) == 1
    assert "unknown keys" in capsys.readouterr().err


def test_config_rejects_wrong_version(tmp_path, capsys):
    cfg = write_json(tmp_path / "bad.json", {"config_version": 2, "synth": {}})
    assert main(["synth", "--out", str(tmp_path / "c"), "--config", str(cfg)]) == 1
    assert "config_version" in capsys.readouterr().err


def test_preprocess_skips_unless_forced(corpus_dir, capsys):
    assert main(["preprocess", "--corpus", str(corpus_dir)]) == 0
    assert "10 skipped" in capsys.readouterr().out
    assert main(["preprocess", "--corpus", str(corpus_dir), "--force"]) == 0
    assert "10 processed" in capsys.readouterr().out


def test_preprocess_reports_bad_utterance_and_fails(tmp_path, capsys):
    cfg = write_json(tmp_path / "s.json", {
        "config_version": 1,
        "synth": {"n_train": 2, "n_val": 1, "n_test": 1,
                  "duration_range_s": [0.5, 0.6]},
    })
    out = tmp_path / "c"
    assert main(["synth", "--out", str(out), "--config", str(cfg)]) == 0
    bad = out / "train" / "utt_0000" / "emg.f32"
    bad.write_bytes(bad.read_bytes()[:40])  # truncated payload
    assert main(["preprocess", "--corpus", str(out)]) == 1
    captured = capsys.readouterr()
    assert "1 failed" in captured.out
    assert "utt_0000" in captured.err
    # the healthy utterances were still processed
    assert "3 processed" in captured.out


def test_train_writes_checkpoints_history_and_config(corpus_dir, tmp_path):
    cfg = write_json(tmp_path / "m.json", MICRO_MODEL)
    out = tmp_path / "run"
    assert main(["train", "--corpus", str(corpus_dir), "--out", str(out),
                 "--config", str(cfg)]) == 0
    for name in ("best", "final"):
        assert (out / name / "weights.bin").exists()
        assert (out / name / "model_config.json").exists()
    history = (out / "history.csv").read_text().strip().splitlines()
    assert len(history) == 1 + 2  # header + one row per epoch
    eff = json.loads((out / "train_config.json").read_text())
    assert eff["train"]["n_epochs"] == 2 and eff["model"]["hidden_dim"] == 8


def test_train_epochs_zero_writes_initial_state_only(corpus_dir, tmp_path):
    cfg = write_json(tmp_path / "m.json", MICRO_MODEL)
    out = tmp_path / "run0"
    assert main(["train", "--corpus", str(corpus_dir), "--out", str(out),
                 "--config", str(cfg), "--epochs", "0"]) == 0
    history = (out / "history.csv").read_text().strip().splitlines()
    assert len(history) == 1  # header only
    assert (out / "best" / "weights.bin").read_bytes() == \
        (out / "final" / "weights.bin").read_bytes()


def test_train_rerun_is_byte_identical(corpus_dir, tmp_path):
    cfg = write_json(tmp_path / "m.json", MICRO_MODEL)
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["train", "--corpus", str(corpus_dir), "--out", str(out),
                     "--config", str(cfg)]) == 0
    for rel in ("history.csv", "best/weights.bin", "final/weights.bin",
                "best/manifest.json", "train_config.json"):
        a = (outs[0] / rel).read_bytes()
        b = (outs[1] / rel).read_bytes()
        assert a == b, f"{rel} differs between identical runs"


def test_train_without_preprocessing_fails(tmp_path, capsys):
    cfg = write_json(tmp_path / "s.json", {
        "config_version": 1,
        "synth": {"n_train": 1, "n_val": 1, "n_test": 1,
                  "duration_range_s": [0.5, 0.6]},
    })
    out = tmp_path / "c"
    assert main(["synth", "--out", str(out), "--config", str(cfg)]) == 0
    assert main(["train", "--corpus", str(out),
                 "--out", str(tmp_path / "r")]) == 1
    assert "preprocess" in capsys.readouterr().err


def test_eval_oracle_scores_every_row_at_one(corpus_dir, tmp_path):
    out = tmp_path / "ev"
    assert main(["eval", "--corpus", str(corpus_dir), "--out", str(out),
                 "--oracle"]) == 0
    report = json.loads((out / "correlation_report.json").read_text())
    assert set(report["entries"]) == set(REPORT_ROWS)
    for name, entry in report["entries"].items():
        assert entry["r"] == pytest.approx(1.0, abs=1e-12), name
    csv_lines = (out / "correlation_report.csv").read_text().strip().splitlines()
    assert len(csv_lines) == 1 + len(REPORT_ROWS)


def test_eval_with_checkpoint_writes_report(corpus_dir, tmp_path):
    cfg = write_json(tmp_path / "m.json", MICRO_MODEL)
    run = tmp_path / "run"
    assert main(["train", "--corpus", str(corpus_dir), "--out", str(run),
                 "--config", str(cfg)]) == 0
    out = tmp_path / "ev"
    assert main(["eval", "--corpus", str(corpus_dir), "--out", str(out),
                 "--checkpoint", str(run / "best")]) == 0
    report = json.loads((out / "correlation_report.json").read_text())
    assert report["n_utterances"] == 2
    assert all(abs(e["r"]) <= 1.0 for e in report["entries"].values())


def test_eval_requires_checkpoint_or_oracle(corpus_dir, tmp_path, capsys):
    assert main(["eval", "--corpus", str(corpus_dir),
                 "--out", str(tmp_path / "ev")]) == 1
    assert "--checkpoint" in capsys.readouterr().err


def test_report_renders_eval_directory(corpus_dir, tmp_path):
    out = tmp_path / "ev"
    assert main(["eval", "--corpus", str(corpus_dir), "--out", str(out),
                 "--oracle"]) == 0
    assert main(["report", str(out)]) == 0
    svg = (out / "correlation_report.svg").read_text()
    ET.fromstring(svg)


def test_report_rejects_unrecognized_directory(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert main(["report", str(tmp_path / "empty")]) == 1
    assert "no correlation_report.json" in capsys.readouterr().err


def test_ablate_useonly_family_full_layout(corpus_dir, tmp_path):
    cfg = write_json(tmp_path / "m.json", {
        "config_version": 1,
        "model": MICRO_MODEL["model"],
        "train": dict(MICRO_MODEL["train"], n_epochs=1),
    })
    out = tmp_path / "abl"
    assert main(["ablate", "--corpus", str(corpus_dir), "--out", str(out),
                 "--config", str(cfg), "--family", "useonly",
                 "--subset", "2,4", "--select-k", "3"]) == 0
    sweep = json.loads((out / "ablation_report.json").read_text())
    assert len(sweep["conditions"]) == 9  # full + 8 use-only
    csv_lines = (out / "heatmap_useonly.csv").read_text().strip().splitlines()
    assert csv_lines[0] == "UL,LL,LI,TT,TB,TD"
    assert len(csv_lines) == 9
    ET.fromstring((out / "heatmap_useonly.svg").read_text())
    sel = json.loads((out / "subset_selection.json").read_text())
    assert len(sel["ids"]) == 3 and len(sel["justifications"]) == 3
    assert (out / "subset" / "subset_2_4" / "correlation_report.json").exists()
    assert (out / "useonly" / "useonly_4" / "history.csv").exists()
    # report command renders the sweep directory too
    assert main(["report", str(out)]) == 0
    ET.fromstring((out / "full_condition.svg").read_text())


def test_bad_subset_argument_fails(corpus_dir, tmp_path, capsys):
    assert main(["ablate", "--corpus", str(corpus_dir),
                 "--out", str(tmp_path / "a"), "--family", "useonly",
                 "--subset", "2,x"]) == 1
    assert "--subset" in capsys.readouterr().err


def test_version_and_usage_exit_codes(capsys):
    assert main(["--version"]) == 0
    assert "emg2artic" in capsys.readouterr().out
    assert main(["frobnicate"]) == 2
