"""PSNR and SSIM for images in [0, 1], and dataset evaluation."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, List

import numpy as np
from scipy.signal import convolve2d

from .errors import ShapeError
from .output_writer import DatasetManifest, ImageScore, ManifestRecord
from .output_writer import MetricReport
from .utils import PathLike, load_image, thread_count

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PEAK = 1.0

__all__ = ["psnr", "ssim", "evaluate", "evaluate_inputs", "MetricReport",
           "ImageScore"]


def _same_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"images differ in shape: {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB; identical images give +inf."""
    _same_dims(a, b)
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / mse)


def _window_size(height: int, width: int) -> int:
    size = min(SSIM_WINDOW, height, width)
    return size if size % 2 == 1 else size - 1


def gaussian_window(size: int, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalised 2-D Gaussian of odd ``size``."""
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_channel(x: np.ndarray, y: np.ndarray, window: np.ndarray) -> float:
    def filt(img: np.ndarray) -> np.ndarray:
        return convolve2d(img, window, mode="valid")

    c1 = (SSIM_K1 * PEAK) ** 2
    c2 = (SSIM_K2 * PEAK) ** 2
    mu_x, mu_y = filt(x), filt(y)
    var_x = filt(x * x) - mu_x * mu_x
    var_y = filt(y * y) - mu_y * mu_y
    cov = filt(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity of two (C, H, W) images.

    Gaussian window 11x11 (sigma 1.5), shrunk to the largest odd size that
    fits images smaller than the window.
    """
    _same_dims(a, b)
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.ndim == 2:
        x, y = x[None], y[None]
    window = gaussian_window(_window_size(x.shape[-2], x.shape[-1]))
    return float(np.mean([_ssim_channel(x[c], y[c], window)
                          for c in range(x.shape[0])]))


def _score(manifest: DatasetManifest, record: ManifestRecord,
           pred_path: Path) -> ImageScore:
    if not pred_path.is_file():
        logger.warning("missing prediction for %s", record.degraded_path)
        return ImageScore(record.degraded_path, None, None)
    try:
        pred = load_image(pred_path)
    except OSError as e:
        logger.warning("cannot decode %s: %s", pred_path, e)
        return ImageScore(record.degraded_path, None, None)
    truth = load_image(manifest.resolve(record.clean_path))
    if pred.shape != truth.shape:
        logger.warning("prediction %s is %s, ground truth is %s",
                       pred_path, pred.shape, truth.shape)
        return ImageScore(record.degraded_path, None, None)
    return ImageScore(record.degraded_path, psnr(pred, truth),
                      ssim(pred, truth))


def _score_all(manifest: DatasetManifest, split: str,
               locate: Callable[[ManifestRecord], Path]) -> MetricReport:
    records: List[ManifestRecord] = manifest.split(split)
    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        scores = list(pool.map(lambda r: _score(manifest, r, locate(r)),
                               records))
    report = MetricReport.from_scores(scores)
    logger.info("evaluated %d images (%d missing)", report.count,
                len(report.missing))
    return report


def evaluate(manifest: DatasetManifest, pred_dir: PathLike,
             split: str = "test") -> MetricReport:
    """Score every record of ``split`` against predictions in ``pred_dir``.

    Predictions are matched by the degraded image's file name.
    """
    folder = Path(pred_dir)
    return _score_all(manifest, split,
                      lambda r: folder / Path(r.degraded_path).name)


def evaluate_inputs(manifest: DatasetManifest,
                    split: str = "test") -> MetricReport:
    """Baseline report: the degraded inputs scored as predictions."""
    return _score_all(manifest, split,
                      lambda r: manifest.resolve(r.degraded_path))
