import os
import zlib
from pathlib import Path
from typing import List, Union

import numpy as np
from PIL import Image

PathLike = Union[str, Path]

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for the named sub-stream of ``seed``.

    Streams used: ``synth``, ``init``, ``shuffle``.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))


def thread_count() -> int:
    """Worker cap from FDVM_THREADS (defaults to the CPU count)."""
    raw = os.environ.get("FDVM_THREADS", "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)


def list_images(folder: PathLike) -> List[Path]:
    """Image files directly inside ``folder``, sorted by name."""
    root = Path(folder)
    return sorted(p for p in root.iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def load_image(path: PathLike) -> np.ndarray:
    """Decode an image into a (3, H, W) float64 array in [0, 1]."""
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
    return np.ascontiguousarray(rgb.transpose(2, 0, 1) / 255.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    """(3, H, W) in [0, 1] -> (H, W, 3) uint8, clipping first."""
    clipped = np.clip(img, 0.0, 1.0)
    return np.round(clipped * 255.0).astype(np.uint8).transpose(1, 2, 0)


def save_image(path: PathLike, img: np.ndarray) -> None:
    """Write a (3, H, W) array in [0, 1] as 8-bit RGB PNG."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img), mode="RGB").save(
        path, format="PNG", optimize=False, compress_level=6)
