"""Tests for the fdvm subcommands and exit codes."""

import sys
from pathlib import Path
from typing import List

import numpy as np
import pytest

import fdvm
from fdvmnet.checkpoint import load_checkpoint, weights_from_checkpoint
from fdvmnet.cli import RUN_CONFIG_NAME, run
from fdvmnet.errors import PartialFailure
from fdvmnet.model import ModelConfig, build_model
from fdvmnet.output_writer import DatasetManifest, parse_report
from fdvmnet.utils import load_image

from conftest import write_images

TINY = ["--channels", "4", "--blocks", "1", "--state-dim", "2",
        "--ssm-fixed-hw", "8"]


def _exit_code(monkeypatch: pytest.MonkeyPatch, argv: List[str]) -> int:
    monkeypatch.setattr(sys, "argv", ["fdvm"] + argv)
    try:
        fdvm.main()
    except SystemExit as e:
        return int(e.code or 0)
    return 0


def _init_checkpoint(tmp_path: Path) -> Path:
    path = tmp_path / "init.ckpt"
    assert run(["init", "--out", str(path)] + TINY) == 0
    return path


def test_params_reference_count(capsys: pytest.CaptureFixture) -> None:
    """Test params prints 59638 for C=16, N=16, 8 blocks per path."""
    assert run(["params", "--channels", "16", "--blocks", "8",
                "--state-dim", "16"]) == 0
    out = capsys.readouterr().out
    assert "closed form: 59638" in out
    assert "measured:    59638" in out
    assert "  ssm:" in out


def test_synth(tmp_path: Path, source_dir: Path,
               capsys: pytest.CaptureFixture) -> None:
    """Test synth writes 12 pairs split 10/2 and a run record."""
    out = tmp_path / "ds"
    assert run(["synth", "--src", str(source_dir), "--out", str(out),
                "--n", "12", "--seed", "7"]) == 0
    assert "12 pairs (10 train / 2 test)" in capsys.readouterr().out
    record = (out / RUN_CONFIG_NAME).read_text()
    assert "SEED=7" in record and "COMMAND=synth" in record
    first = (out / "manifest.tsv").read_bytes()

    assert run(["synth", "--src", str(source_dir), "--out", str(out),
                "--n", "12", "--seed", "7"]) == 0
    assert (out / "manifest.tsv").read_bytes() == first


def test_synth_from_config_file(tmp_path: Path, source_dir: Path) -> None:
    """Test N comes from the config file when no flag is given."""
    config = tmp_path / "run.txt"
    config.write_text("N=3\nSEED=2\n")
    out = tmp_path / "ds"
    assert run(["synth", "--config", str(config), "--src", str(source_dir),
                "--out", str(out)]) == 0
    assert len((out / "manifest.tsv").read_text().splitlines()) == 4


def test_synth_zero_pairs_exit_code(monkeypatch: pytest.MonkeyPatch,
                                    tmp_path: Path,
                                    source_dir: Path) -> None:
    """Test --n 0 is a usage error (exit 2)."""
    code = _exit_code(monkeypatch, ["synth", "--src", str(source_dir),
                                    "--out", str(tmp_path / "ds"),
                                    "--n", "0"])
    assert code == 2


def test_unknown_subcommand_exit_code(
        monkeypatch: pytest.MonkeyPatch) -> None:
    """Test argparse usage errors exit with 2."""
    assert _exit_code(monkeypatch, ["fly"]) == 2


def test_bad_manifest_exit_code(monkeypatch: pytest.MonkeyPatch,
                                tmp_path: Path) -> None:
    """Test an unreadable manifest exits with 2."""
    bad = tmp_path / "manifest.tsv"
    bad.write_text("only\ttwo\n")
    code = _exit_code(monkeypatch, ["train", "--manifest", str(bad),
                                    "--out", str(tmp_path / "run")])
    assert code == 2


def test_train_zero_epochs(tmp_path: Path, manifest_path: Path) -> None:
    """Test --epochs 0 writes the initial weights as the checkpoint."""
    out = tmp_path / "run"
    assert run(["train", "--manifest", str(manifest_path), "--out",
                str(out), "--epochs", "0", "--seed", "3"] + TINY) == 0
    loaded = weights_from_checkpoint(load_checkpoint(out / "model.ckpt"))
    cfg = ModelConfig(channels=4, blocks_per_path=1, ssm_state_dim=2,
                      ssm_fixed_hw=8)
    fresh = build_model(cfg, seed=3).named_parameters()
    for name, t in loaded.named_parameters().items():
        np.testing.assert_allclose(t.data, fresh[name].data, rtol=1e-6,
                                   atol=1e-7)
    assert "COMMAND=train" in (out / RUN_CONFIG_NAME).read_text()


def test_ablate_trains(tmp_path: Path, manifest_path: Path) -> None:
    """Test ablate trains the requested variant and logs its loss."""
    out = tmp_path / "run"
    assert run(["ablate", "--manifest", str(manifest_path), "--out",
                str(out), "--ablation", "no_ssm", "--epochs", "1",
                "--batch", "2", "--patch", "16"] + TINY) == 0
    ckpt = load_checkpoint(out / "model.ckpt")
    assert ckpt.config.ablation == "no_ssm"
    assert len((out / "train_log.tsv").read_text().splitlines()) == 1


def test_infer_identity_at_init(tmp_path: Path) -> None:
    """Test a fresh checkpoint returns same-size copies of its inputs."""
    ckpt = _init_checkpoint(tmp_path)
    inputs = tmp_path / "in"
    write_images(inputs, 1, 48, 60, seed=1)
    (inputs / "img_00.png").rename(inputs / "wide.png")
    write_images(inputs, 1, 100, 100, seed=2)
    out = tmp_path / "out"
    assert run(["infer", "--checkpoint", str(ckpt), "--input", str(inputs),
                "--out", str(out)]) == 0
    for name in ("wide.png", "img_00.png"):
        source = load_image(inputs / name)
        result = load_image(out / name)
        assert result.shape == source.shape
        np.testing.assert_array_equal(result, source)


def test_infer_partial_failure(tmp_path: Path,
                               monkeypatch: pytest.MonkeyPatch) -> None:
    """Test a bad file is reported, the rest written, exit code 4."""
    ckpt = _init_checkpoint(tmp_path)
    inputs = tmp_path / "in"
    write_images(inputs, 2, 12, 12)
    (inputs / "broken.png").write_bytes(b"\x89PNG garbage")
    out = tmp_path / "out"
    with pytest.raises(PartialFailure):
        run(["infer", "--checkpoint", str(ckpt), "--input", str(inputs),
             "--out", str(out)])
    assert (out / "img_00.png").is_file() and (out / "img_01.png").is_file()
    code = _exit_code(monkeypatch, ["infer", "--checkpoint", str(ckpt),
                                    "--input", str(inputs),
                                    "--out", str(out)])
    assert code == 4


def test_infer_reports_each_failure_once(
        tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
    """Test a failed image shows up once across stdout and stderr."""
    ckpt = _init_checkpoint(tmp_path)
    inputs = tmp_path / "in"
    write_images(inputs, 1, 12, 12)
    (inputs / "broken.png").write_bytes(b"\x89PNG garbage")
    capsys.readouterr()
    with pytest.raises(PartialFailure):
        run(["infer", "--checkpoint", str(ckpt), "--input", str(inputs),
             "--out", str(tmp_path / "out")])
    captured = capsys.readouterr()
    lines = (captured.out + captured.err).splitlines()
    reports = [line for line in lines if "broken.png" in line]
    assert len(reports) == 1 and reports[0].startswith("Error: ")


def test_infer_too_small(tmp_path: Path) -> None:
    """Test images below 8x8 fail per file."""
    ckpt = _init_checkpoint(tmp_path)
    write_images(tmp_path / "in", 1, 4, 4)
    with pytest.raises(PartialFailure):
        run(["infer", "--checkpoint", str(ckpt), "--input",
             str(tmp_path / "in"), "--out", str(tmp_path / "out")])


def test_eval_modes(tmp_path: Path, tiny_dataset: DatasetManifest,
                    manifest_path: Path) -> None:
    """Test eval by checkpoint equals the input baseline at init."""
    ckpt = _init_checkpoint(tmp_path)
    by_model = tmp_path / "model" / "report.tsv"
    baseline = tmp_path / "base" / "report.tsv"
    assert run(["eval", "--manifest", str(manifest_path), "--checkpoint",
                str(ckpt), "--report", str(by_model)]) == 0
    assert run(["eval", "--manifest", str(manifest_path), "--baseline",
                "--report", str(baseline)]) == 0
    assert by_model.read_text() == baseline.read_text()
    report = parse_report(baseline.read_text())
    assert report.count == len(tiny_dataset.split("test"))


def test_eval_missing_predictions(tmp_path: Path,
                                  manifest_path: Path) -> None:
    """Test an empty prediction folder lists every image as missing."""
    (tmp_path / "pred").mkdir()
    report_path = tmp_path / "eval" / "report.tsv"
    with pytest.raises(PartialFailure):
        run(["eval", "--manifest", str(manifest_path), "--pred",
             str(tmp_path / "pred"), "--report", str(report_path)])
    assert "MISSING" in report_path.read_text()


def test_check_passes(capsys: pytest.CaptureFixture) -> None:
    """Test the self-check passes and prints per-check timings."""
    assert run(["check"]) == 0
    out = capsys.readouterr().out
    lines = [line for line in out.splitlines() if line.startswith("PASS")]
    assert len(lines) == 6
    assert all(line.endswith(" s)") for line in lines)


def test_check_fault_injection(monkeypatch: pytest.MonkeyPatch,
                               capsys: pytest.CaptureFixture) -> None:
    """Test a corrupted scan fails the check with exit 1 naming ssm."""
    code = _exit_code(monkeypatch, ["check", "--inject-fault", "ssm"])
    assert code == 1
    out = capsys.readouterr().out
    assert "FAIL ssm: scan vs reference" in out
    assert "Self-check failed in: ssm" in out
