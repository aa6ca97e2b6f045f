"""Shared fixtures: tiny image folders and synthesized datasets."""

from pathlib import Path
from typing import List

import numpy as np
import pytest

from fdvmnet.degrade import MANIFEST_NAME, build_dataset
from fdvmnet.model import ModelConfig
from fdvmnet.output_writer import DatasetManifest
from fdvmnet.utils import save_image


def write_images(folder: Path, count: int, height: int, width: int,
                 seed: int = 0) -> List[Path]:
    """Random RGB PNGs named img_00.png, img_01.png, ..."""
    rng = np.random.default_rng(seed)
    folder.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        path = folder / f"img_{i:02d}.png"
        save_image(path, rng.random((3, height, width)))
        paths.append(path)
    return paths


@pytest.fixture
def source_dir(tmp_path: Path) -> Path:
    folder = tmp_path / "sources"
    write_images(folder, 3, 16, 16)
    return folder


@pytest.fixture
def tiny_dataset(tmp_path: Path, source_dir: Path) -> DatasetManifest:
    """Six 16x16 pairs, five for training."""
    return build_dataset(source_dir, tmp_path / "ds", 6, seed=3)


@pytest.fixture
def manifest_path(tiny_dataset: DatasetManifest) -> Path:
    return tiny_dataset.root / MANIFEST_NAME


@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(channels=4, blocks_per_path=1, ssm_state_dim=2,
                       ssm_fixed_hw=8)
