import json
from pathlib import Path

import pytest

from tokenworld.cli import build_parser, main
from tokenworld.config import load_config_file, save_config_file

from conftest import REPO, tiny_train_config

REFERENCE_CSV = REPO / "data" / "atari100k_reference_scores.csv"


@pytest.fixture(scope="module")
def tiny_config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.cfg"
    save_config_file(tiny_train_config(epochs=1, collection_epochs=1), path)
    return path


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory, tiny_config_file):
    out = tmp_path_factory.mktemp("cli_run")
    code = main(["train", "--config", str(tiny_config_file), "--seed", "3", "--out", str(out)])
    assert code == 0
    return out


def test_train_writes_artifacts(trained_dir):
    assert (trained_dir / "checkpoint.ckpt").exists()
    assert (trained_dir / "metrics.ndjson").exists()
    assert (trained_dir / "config.used").exists()
    assert list((trained_dir / "episodes").glob("*.twep"))


def test_train_resume_flag(trained_dir, tmp_path):
    code = main(["train", "--resume", str(trained_dir / "checkpoint.ckpt"),
                 "--out", str(trained_dir)])
    assert code == 0  # already at final epoch: loads, saves, exits


def test_eval_command(trained_dir, capsys):
    code = main(["eval", "--checkpoint", str(trained_dir / "checkpoint.ckpt"),
                 "--episodes", "3", "--temperature", "0.5", "--seed", "1"])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["episodes"] == 3
    assert len(out["returns"]) == 3


def test_imagine_command(trained_dir, tmp_path, capsys):
    out_dir = tmp_path / "imagined"
    code = main(["imagine", "--checkpoint", str(trained_dir / "checkpoint.ckpt"),
                 "--frames", "4", "--out", str(out_dir),
                 "--episodes-dir", str(trained_dir / "episodes"), "--seed", "7"])
    assert code == 0
    pngs = sorted(out_dir.glob("frame_*.png"))
    assert 1 <= len(pngs) <= 4
    summary = json.loads((out_dir / "rollout.json").read_text())
    assert summary["frames"] == len(pngs)


def test_scores_command(tmp_path, capsys):
    out_json = tmp_path / "report.json"
    profile = tmp_path / "profile.csv"
    code = main(["scores", "--csv", str(REFERENCE_CSV), "--out", str(out_json),
                 "--profile-out", str(profile)])
    assert code == 0
    report = json.loads(out_json.read_text())
    assert abs(report["mean"] - 1.046) < 0.005
    assert report["superhuman"] == 10
    lines = profile.read_text().splitlines()
    assert lines[0] == "threshold,fraction"
    assert len(lines) == 102


def test_scores_with_bootstrap(capsys):
    code = main(["scores", "--csv", str(REFERENCE_CSV), "--resamples", "50"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert "mean_ci" in report
    assert report["mean_ci"]["lower"] <= report["mean"] <= report["mean_ci"]["upper"]


def test_config_file_roundtrip(tmp_path):
    cfg = tiny_train_config(epochs=7)
    cfg.dynamics.layers = 3
    path = tmp_path / "c.cfg"
    save_config_file(cfg, path)
    loaded = load_config_file(path)
    assert loaded.epochs == 7
    assert loaded.dynamics.layers == 3
    assert loaded.tokenizer.channels == cfg.tokenizer.channels


def test_parser_covers_all_subcommands():
    parser = build_parser()
    for command in ("train", "eval", "imagine", "serve", "scores"):
        args = parser.parse_args([command] + {
            "train": ["--out", "x"],
            "eval": ["--checkpoint", "c"],
            "imagine": ["--checkpoint", "c", "--out", "x"],
            "serve": ["--checkpoint", "c", "--port", "1"],
            "scores": ["--csv", "s"],
        }[command])
        assert args.command == command
