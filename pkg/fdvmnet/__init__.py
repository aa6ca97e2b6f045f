"""Dual-path frequency-domain exposure correction on a numpy tape."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .degrade import CrfModel, build_dataset, lecarm_apply
from .metrics import evaluate, psnr, ssim
from .model import ModelConfig, ModelWeights, build_model, fdvm_forward
from .parser import RunConfig, parse_dict, parse_file
from .spectral import SpectralPair, analyze, synthesize
from .ssm import SsmParams, scan_reference, selective_scan
from .tensor import Tape, Tensor, backward
from .train import TrainConfig, l1_loss, train_loop

__all__ = [
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "CrfModel",
    "build_dataset",
    "lecarm_apply",
    "evaluate",
    "psnr",
    "ssim",
    "ModelConfig",
    "ModelWeights",
    "build_model",
    "fdvm_forward",
    "RunConfig",
    "parse_dict",
    "parse_file",
    "SpectralPair",
    "analyze",
    "synthesize",
    "SsmParams",
    "scan_reference",
    "selective_scan",
    "Tape",
    "Tensor",
    "backward",
    "TrainConfig",
    "l1_loss",
    "train_loop",
]
