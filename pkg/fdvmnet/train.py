"""L1 loss, batch assembly and the training loop."""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .checkpoint import Checkpoint, checkpoint_from_weights, save_checkpoint
from .errors import ConfigError, InputError, ShapeError
from .model import ModelWeights, fdvm_forward
from .optim import AdamConfig, AdamState, adam_step
from .output_writer import DatasetManifest, read_train_log, write_train_log
from .tensor import Tape, Tensor, backward, bilinear_resize, record
from .utils import PathLike, load_image, rng_stream

logger = logging.getLogger(__name__)

CROP_MODES = ("resize", "random")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    epochs: int = 10
    patch_size: int = 64
    seed: int = 0
    ablation: str = "full"
    checkpoint_path: Optional[str] = None
    checkpoint_every: int = 0
    crop: str = "resize"

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("BATCH must be >= 1")
        if self.epochs < 0:
            raise ConfigError("EPOCHS must be >= 0")
        if self.patch_size < 8:
            raise ConfigError("PATCH must be >= 8")
        if self.checkpoint_every < 0:
            raise ConfigError("CHECKPOINT_EVERY must be >= 0")
        if self.crop not in CROP_MODES:
            raise ConfigError(f"CROP must be one of {', '.join(CROP_MODES)}")
        self.adam()

    @property
    def betas(self) -> Tuple[float, float]:
        return self.beta1, self.beta2

    def adam(self) -> AdamConfig:
        return AdamConfig(self.lr, self.beta1, self.beta2, self.eps)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: List[Tuple[int, float]] = field(default_factory=list)


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference; subgradient 0 at exact ties."""
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: dims {pred.shape} and {target.shape} "
                         f"differ")
    diff = pred.data - target.data
    n = diff.size
    sign = np.sign(diff)
    value = np.array([np.abs(diff).mean()])

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        d = sign * (g[0] / n)
        return d, -d

    return record("l1_loss", (pred, target), value, grad_fn)


@dataclass
class PairSet:
    """Decoded training pairs, each (3, H, W) in [0, 1]."""
    degraded: List[np.ndarray]
    clean: List[np.ndarray]

    def __len__(self) -> int:
        return len(self.degraded)


def load_pairs(manifest: DatasetManifest, split: str = "train") -> PairSet:
    """Decode every pair of ``split``; undecodable pairs are skipped."""
    degraded: List[np.ndarray] = []
    clean: List[np.ndarray] = []
    for rec in manifest.split(split):
        try:
            x = load_image(manifest.resolve(rec.degraded_path))
            y = load_image(manifest.resolve(rec.clean_path))
        except OSError as e:
            logger.warning("skipping %s: %s", rec.degraded_path, e)
            continue
        if x.shape != y.shape:
            logger.warning("skipping %s: degraded %s vs clean %s",
                           rec.degraded_path, x.shape, y.shape)
            continue
        degraded.append(x)
        clean.append(y)
    return PairSet(degraded, clean)


def _resize(img: np.ndarray, size: int) -> np.ndarray:
    return bilinear_resize(Tensor(img[None]), size, size).data[0]


def _patch(x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
           rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    size = cfg.patch_size
    h, w = x.shape[1], x.shape[2]
    if cfg.crop == "random" and h >= size and w >= size:
        top = int(rng.integers(0, h - size + 1))
        left = int(rng.integers(0, w - size + 1))
        return (x[:, top:top + size, left:left + size],
                y[:, top:top + size, left:left + size])
    return _resize(x, size), _resize(y, size)


def _batches(order: np.ndarray, batch_size: int) -> List[np.ndarray]:
    batches = [order[i:i + batch_size]
               for i in range(0, len(order), batch_size)]
    last = batches[-1] if batches else None
    if (last is not None and len(batches) > 1
            and len(last) < batch_size and len(last) < 2):
        logger.info("dropping ragged final batch of %d", len(last))
        batches.pop()
    return batches


def train_loop(
    weights: ModelWeights,
    manifest: DatasetManifest,
    cfg: TrainConfig,
    log_path: Optional[PathLike] = None,
    resume: Optional[Checkpoint] = None,
) -> TrainResult:
    """Train ``weights`` in place on the manifest's train split."""
    if weights.config.ablation != cfg.ablation:
        raise ConfigError(f"weights were built as '{weights.config.ablation}'"
                          f", training asked for '{cfg.ablation}'")
    pairs = load_pairs(manifest, "train")
    if len(pairs) == 0:
        raise InputError("no usable training pairs in the manifest")

    params = weights.named_parameters()
    adam_cfg = cfg.adam()
    rng = rng_stream(cfg.seed, "shuffle")
    adam = AdamState()
    start_epoch = 0
    if resume is not None:
        start_epoch = resume.epoch
        if resume.adam is not None:
            adam = resume.adam
        if resume.rng_state is not None:
            rng.bit_generator.state = resume.rng_state

    resized: Optional[Tuple[np.ndarray, np.ndarray]] = None
    if cfg.crop == "resize":
        resized = (
            np.stack([_resize(x, cfg.patch_size) for x in pairs.degraded]),
            np.stack([_resize(y, cfg.patch_size) for y in pairs.clean]),
        )

    log: List[Tuple[int, float]] = []
    if resume is not None and log_path is not None:
        try:
            log = [e for e in read_train_log(log_path) if e[0] <= start_epoch]
        except FileNotFoundError:
            pass
    epoch = start_epoch
    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        losses: List[float] = []
        for idx in _batches(rng.permutation(len(pairs)), cfg.batch_size):
            if resized is not None:
                x, y = resized[0][idx], resized[1][idx]
            else:
                cropped = [_patch(pairs.degraded[i], pairs.clean[i], cfg, rng)
                           for i in idx]
                x = np.stack([c[0] for c in cropped])
                y = np.stack([c[1] for c in cropped])

            for p in params.values():
                p.zero_grad()
            with Tape() as tape:
                pred = fdvm_forward(Tensor(x), weights)
                loss = l1_loss(pred, Tensor(y))
            backward(loss, tape)
            adam_step(params, adam, adam_cfg)
            losses.append(loss.item())

        if not losses:
            raise InputError(f"epoch {epoch} produced no batches")
        mean_loss = float(np.mean(losses))
        log.append((epoch, mean_loss))
        logger.info("epoch %d: mean L1 %.6f", epoch, mean_loss)
        if log_path is not None:
            write_train_log(log_path, log)
        if (cfg.checkpoint_path and cfg.checkpoint_every
                and epoch % cfg.checkpoint_every == 0):
            save_checkpoint(
                checkpoint_from_weights(weights, adam,
                                        rng.bit_generator.state, epoch),
                cfg.checkpoint_path)

    if log_path is not None:
        write_train_log(log_path, log)
    ckpt = checkpoint_from_weights(weights, adam, rng.bit_generator.state,
                                   epoch)
    if cfg.checkpoint_path:
        save_checkpoint(ckpt, cfg.checkpoint_path)
    return TrainResult(ckpt, log)
