"""Tests for PSNR, SSIM, evaluation and the report format."""

import math
import shutil
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from fdvmnet.errors import InputError, ShapeError
from fdvmnet.metrics import evaluate, evaluate_inputs, psnr, ssim
from fdvmnet.output_writer import (
    DatasetManifest,
    ImageScore,
    MetricReport,
    parse_report,
    report_lines,
)
from fdvmnet.utils import save_image


def test_psnr_reference_value() -> None:
    """Test PSNR of uniform 0 against uniform 0.5 is 6.0206 dB."""
    a = np.zeros((3, 8, 8))
    b = np.full((3, 8, 8), 0.5)
    assert psnr(a, b) == pytest.approx(6.0206, abs=1e-3)


def test_ssim_reference_value() -> None:
    """Test SSIM of uniform 0.2 against uniform 0.4."""
    a = np.full((3, 32, 32), 0.2)
    b = np.full((3, 32, 32), 0.4)
    assert ssim(a, b) == pytest.approx(0.80010, abs=1e-4)


def test_identical_images() -> None:
    """Test identical images score (+inf, 1)."""
    img = np.random.default_rng(0).random((3, 20, 20))
    assert math.isinf(psnr(img, img))
    assert ssim(img, img) == pytest.approx(1.0)


def test_small_images_shrink_window() -> None:
    """Test SSIM works on images smaller than the 11x11 window."""
    rng = np.random.default_rng(1)
    a = rng.random((3, 5, 7))
    assert ssim(a, a) == pytest.approx(1.0)
    assert ssim(a, rng.random((3, 5, 7))) < 1.0


def test_ssim_is_structure_sensitive() -> None:
    """Test a small brightness shift beats a pixel shuffle."""
    rng = np.random.default_rng(2)
    a = rng.random((3, 24, 24)) * 0.8
    shuffled = rng.permutation(a.reshape(-1)).reshape(a.shape)
    assert ssim(a, a + 0.05) > ssim(a, shuffled)


def test_psnr_falls_with_noise() -> None:
    """Test PSNR strictly decreases as the noise amplitude grows."""
    rng = np.random.default_rng(3)
    img = rng.random((3, 16, 16))
    noise = rng.normal(size=img.shape)
    scores = [psnr(img, img + level * noise)
              for level in (0.001, 0.01, 0.05, 0.1, 0.3)]
    assert all(a > b for a, b in zip(scores, scores[1:]))


def test_psnr_ignores_shared_permutation() -> None:
    """Test shuffling both images' pixels the same way keeps PSNR."""
    rng = np.random.default_rng(4)
    a = rng.random((3, 12, 10))
    b = rng.random((3, 12, 10))
    order = rng.permutation(a.size)
    shuffled_a = a.reshape(-1)[order].reshape(a.shape)
    shuffled_b = b.reshape(-1)[order].reshape(b.shape)
    assert psnr(shuffled_a, shuffled_b) == pytest.approx(psnr(a, b),
                                                         rel=1e-12)


def test_dims_must_match() -> None:
    """Test metrics refuse images of different dims."""
    with pytest.raises(ShapeError):
        psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))
    with pytest.raises(ShapeError):
        ssim(np.zeros((3, 4, 4)), np.zeros((3, 5, 4)))


def _copy_clean_as_predictions(manifest: DatasetManifest,
                               pred_dir: Path) -> None:
    pred_dir.mkdir(parents=True, exist_ok=True)
    for record in manifest.split("test"):
        shutil.copy(manifest.resolve(record.clean_path),
                    pred_dir / Path(record.degraded_path).name)


def test_evaluate_ground_truth(tmp_path: Path,
                               tiny_dataset: DatasetManifest) -> None:
    """Test ground truths scored against themselves give SSIM 1."""
    _copy_clean_as_predictions(tiny_dataset, tmp_path / "pred")
    report = evaluate(tiny_dataset, tmp_path / "pred")
    assert report.count == len(tiny_dataset.split("test"))
    assert report.inf_count == report.count
    assert math.isinf(report.mean_psnr)
    assert report.mean_ssim == pytest.approx(1.0)
    assert report.missing == []


def test_evaluate_missing_prediction(tmp_path: Path,
                                     tiny_dataset: DatasetManifest) -> None:
    """Test a missing prediction is listed and left out of the means."""
    manifest = _all_in_test_split(tiny_dataset)
    _copy_clean_as_predictions(manifest, tmp_path / "pred")
    victim = manifest.split("test")[0]
    (tmp_path / "pred" / Path(victim.degraded_path).name).unlink()
    report = evaluate(manifest, tmp_path / "pred")
    assert report.missing == [victim.degraded_path]
    assert report.count == len(manifest.split("test")) - 1
    assert report.mean_ssim == pytest.approx(1.0)


def test_evaluate_wrong_size_prediction(
        tmp_path: Path, tiny_dataset: DatasetManifest) -> None:
    """Test a prediction of the wrong size is listed, not fatal."""
    manifest = _all_in_test_split(tiny_dataset)
    _copy_clean_as_predictions(manifest, tmp_path / "pred")
    victim = manifest.split("test")[0]
    save_image(tmp_path / "pred" / Path(victim.degraded_path).name,
               np.full((3, 8, 8), 0.5))
    report = evaluate(manifest, tmp_path / "pred")
    assert report.missing == [victim.degraded_path]
    assert report.count == len(manifest.split("test")) - 1
    assert report.mean_ssim == pytest.approx(1.0)


def _all_in_test_split(manifest: DatasetManifest) -> DatasetManifest:
    """Same dataset with every record moved to the test split."""
    records = [replace(r, split="test") for r in manifest.records]
    return DatasetManifest(records, manifest.seed, manifest.root)


def test_evaluate_inputs_baseline(tiny_dataset: DatasetManifest) -> None:
    """Test the degraded-input baseline is finite and below SSIM 1."""
    report = evaluate_inputs(tiny_dataset)
    assert report.count == len(tiny_dataset.split("test"))
    assert math.isfinite(report.mean_psnr)
    assert report.mean_ssim < 1.0


def test_report_parse_print() -> None:
    """Test report lines survive a parse and print."""
    scores = [
        ImageScore("degraded/0000.png", 31.25, 0.91),
        ImageScore("degraded/0001.png", math.inf, 1.0),
        ImageScore("degraded/0002.png", None, None),
    ]
    report = MetricReport.from_scores(scores)
    lines = report_lines(report)
    assert lines[-1] == "MEAN\t31.2500\t0.955000\t2\t1\t1"
    assert report_lines(parse_report("\n".join(lines))) == lines


def test_report_parse_errors() -> None:
    """Test a report without footer or with a bad number is refused."""
    with pytest.raises(InputError):
        parse_report("degraded/0000.png\t30.0\t0.9\n")
    with pytest.raises(InputError):
        parse_report("a.png\tabc\t0.9\nMEAN\t1\t1\t1\t0\t0\n")
