"""Synthetic under/over-exposure from a beta-gamma camera response.

For exposure value E the ratio is k = g**E and every pixel value P maps to
``exp(b * (1 - k**a)) * P ** (k**a)``, clipped to [0, 1].
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np

from .errors import ConfigError, DomainError, InputError
from .output_writer import DatasetManifest, ManifestRecord, write_manifest
from .utils import (
    PathLike,
    list_images,
    load_image,
    rng_stream,
    save_image,
    thread_count,
)

logger = logging.getLogger(__name__)

MIN_ABS_EXPOSURE = 0.05
MANIFEST_NAME = "manifest.tsv"


@dataclass(frozen=True)
class CrfModel:
    """Camera response constants and the exposure-ratio base."""
    a: float = -0.3293
    b: float = 1.1258
    gain_scale: float = 2.0

    def __post_init__(self) -> None:
        if self.a == 0:
            raise ConfigError("CRF_A must be non-zero")
        if self.gain_scale <= 0:
            raise ConfigError("GAIN must be > 0")

    def ratio(self, exposure: float) -> float:
        return float(self.gain_scale ** exposure)


def lecarm_apply(img: np.ndarray, exposure: float,
                 crf: CrfModel = CrfModel()) -> np.ndarray:
    """Re-expose an image in [0, 1] by the ratio ``g ** exposure``."""
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise DomainError("image values must lie in [0, 1]")
    if exposure == 0:
        return img.copy()
    gamma = crf.ratio(exposure) ** crf.a
    beta = math.exp(crf.b * (1.0 - gamma))
    # 0 ** gamma is 0 for the positive exponents this map produces
    return np.clip(beta * np.power(img, gamma), 0.0, 1.0)


def sample_exposure(rng: np.random.Generator) -> float:
    """Uniform draw from (-1, 1) with |E| >= MIN_ABS_EXPOSURE."""
    while True:
        e = float(rng.uniform(-1.0, 1.0))
        if abs(e) >= MIN_ABS_EXPOSURE and -1.0 < e < 1.0:
            return e


def split_counts(n: int, train_frac: float) -> Tuple[int, int]:
    """(train, test) sizes, rounding half up."""
    n_train = int(math.floor(n * train_frac + 0.5))
    n_train = min(max(n_train, 0), n)
    return n_train, n - n_train


def _write_pair(source: Path, out_dir: Path, index: int, exposure: float,
                crf: CrfModel) -> Tuple[str, str]:
    clean_rel = f"clean/{index:04d}.png"
    degraded_rel = f"degraded/{index:04d}.png"
    clean_path = out_dir / clean_rel
    clean_path.parent.mkdir(parents=True, exist_ok=True)
    clean = load_image(source)
    save_image(clean_path, clean)
    save_image(out_dir / degraded_rel, lecarm_apply(clean, exposure, crf))
    return degraded_rel, clean_rel


def build_dataset(
    src_dir: PathLike,
    out_dir: PathLike,
    n_pairs: int,
    train_frac: float = 5.0 / 6.0,
    seed: int = 0,
    crf: CrfModel = CrfModel(),
) -> DatasetManifest:
    """Write degraded/clean pairs and ``manifest.tsv`` under ``out_dir``.

    Sources are used in name order, cycling when ``n_pairs`` exceeds the
    folder size. The split is a seeded shuffle honouring ``train_frac``.
    """
    if n_pairs < 1:
        raise ConfigError("N must be >= 1")
    if not 0.0 <= train_frac <= 1.0:
        raise ConfigError("TRAIN_FRAC must lie in [0, 1]")
    src = Path(src_dir)
    if not src.is_dir():
        raise InputError(f"source folder '{src}' does not exist")
    sources = list_images(src)
    if not sources:
        raise InputError(f"no images found in '{src}'")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = rng_stream(seed, "synth")
    exposures = [sample_exposure(rng) for _ in range(n_pairs)]
    order = rng.permutation(n_pairs)
    n_train, _ = split_counts(n_pairs, train_frac)
    train_set = {int(i) for i in order[:n_train]}

    jobs = [(sources[i % len(sources)], i, exposures[i])
            for i in range(n_pairs)]
    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        paths = list(pool.map(
            lambda job: _write_pair(job[0], out, job[1], job[2], crf), jobs))

    records = [
        ManifestRecord(
            degraded_path=degraded,
            clean_path=clean,
            exposure=exposures[i],
            split="train" if i in train_set else "test",
        )
        for i, (degraded, clean) in enumerate(paths)
    ]
    manifest = DatasetManifest(records=records, seed=seed, root=out)
    write_manifest(out / MANIFEST_NAME, manifest)
    logger.info("wrote %d pairs (%d train / %d test) to %s",
                n_pairs, n_train, n_pairs - n_train, out)
    return manifest
