"""Command-line interface tests: exit codes and artifacts for the train,
evaluate, and protect subcommands on a small synthetic corpus."""

from __future__ import annotations

import json

import pytest

from mamc.cli import main
from mamc.corpus import toy_corpus
from mamc.imagecore import save_image
from mamc.oracle import pretrain_oracle

CORPUS_FLAGS = ["--toy", "24", "--corpus-seed", "3", "--split-seed", "3"]


@pytest.fixture(scope="module")
def cli_env(tmp_path_factory):
    """Oracle container plus one trained checkpoint, produced through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    images = toy_corpus(24, seed=3)
    oracle = pretrain_oracle(list(images.values()), epochs=1, seed=11, min_corpus=1)
    oracle_path = root / "oracle.mamc"
    oracle.save(oracle_path)
    ckpt_path = root / "protector.mamc"
    rc = main(["train", *CORPUS_FLAGS, "--oracle", str(oracle_path),
               "--epochs", "1", "--batch-size", "8", "--out", str(ckpt_path)])
    assert rc == 0
    return root, oracle_path, ckpt_path, images


def test_usage_error_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train"])  # --out and --oracle are required
    assert exc.value.code == 2
    assert "required" in capsys.readouterr().err


def test_unknown_command_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_train_writes_checkpoint_and_curves(cli_env):
    root, _, ckpt_path, _ = cli_env
    assert ckpt_path.exists()
    assert ckpt_path.with_suffix(".csv").exists()
    assert ckpt_path.with_suffix(".png").exists()


def test_train_missing_oracle_exits_1(tmp_path, capsys):
    rc = main(["train", *CORPUS_FLAGS, "--oracle", str(tmp_path / "absent.mamc"),
               "--epochs", "1", "--out", str(tmp_path / "p.mamc")])
    assert rc == 1
    assert "oracle weights not found" in capsys.readouterr().err


def test_evaluate_reports_both_protocols(cli_env, tmp_path, capsys):
    _, oracle_path, ckpt_path, _ = cli_env
    out = tmp_path / "report.json"
    rc = main(["evaluate", *CORPUS_FLAGS, "--oracle", str(oracle_path),
               "--checkpoint", str(ckpt_path), "--max-images", "4",
               "--out", str(out)])
    assert rc == 0
    report = json.loads(out.read_text())
    assert report["p1"]["protocol"] == "P1"
    assert report["p2"]["protocol"] == "P2"
    assert report["p1"]["sample_count"] == 4
    printed = json.loads(capsys.readouterr().out)
    assert printed == report


def test_evaluate_missing_checkpoint_exits_1(cli_env, tmp_path, capsys):
    _, oracle_path, _, _ = cli_env
    rc = main(["evaluate", *CORPUS_FLAGS, "--oracle", str(oracle_path),
               "--checkpoint", str(tmp_path / "missing.mamc")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_protect_single_image(cli_env, tmp_path):
    _, _, ckpt_path, images = cli_env
    src = tmp_path / "in.png"
    save_image(images[sorted(images)[0]], src)
    out = tmp_path / "out.png"
    rc = main(["protect", "--in", str(src), "--out", str(out),
               "--checkpoint", str(ckpt_path)])
    assert rc == 0
    assert out.exists()


def test_protect_unavailable_bank_level_exits_1(cli_env, tmp_path, capsys):
    _, _, _, images = cli_env
    bank = tmp_path / "bank"
    bank.mkdir()
    (bank / "bank_manifest.json").write_text(json.dumps(
        {"oracle_hash": "x", "levels": []}))
    src = tmp_path / "in.png"
    save_image(images[sorted(images)[0]], src)
    rc = main(["protect", "--in", str(src), "--out", str(tmp_path / "o.png"),
               "--bank", str(bank), "--level", "30"])
    assert rc == 1
    assert "not available" in capsys.readouterr().err
