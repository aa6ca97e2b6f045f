"""Subcommands of the ``fdvm`` tool.

``run`` raises on error and returns the exit status of a completed
command; the entry script maps exceptions to exit codes.
"""

import argparse
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .checkpoint import (
    checkpoint_from_weights,
    load_checkpoint,
    save_checkpoint,
    weights_from_checkpoint,
)
from .degrade import MANIFEST_NAME, build_dataset
from .errors import ConfigError, InputError, PartialFailure
from .metrics import evaluate, evaluate_inputs
from .model import (
    ABLATIONS,
    IMAGE_CHANNELS,
    ModelWeights,
    apply_ablation,
    build_model,
    count_parameters,
    fdvm_forward,
    parameter_groups,
)
from .output_writer import (
    read_manifest,
    report_lines,
    write_report,
    write_run_config,
)
from .parser import RunConfig, resolve
from .selfcheck import FAULTS, run_selfcheck
from .tensor import Tensor
from .train import CROP_MODES, train_loop
from .utils import list_images, load_image, save_image

logger = logging.getLogger(__name__)

RUN_CONFIG_NAME = "run_config.txt"
CHECKPOINT_NAME = "model.ckpt"
TRAIN_LOG_NAME = "train_log.tsv"
MIN_SIDE = 8

# option keys shared with the config file
_RUN_KEYS = (
    "seed", "n", "train_frac", "gain", "crf_a", "crf_b", "channels",
    "blocks", "state_dim", "ssm_fixed_hw", "patch", "batch", "epochs",
    "lr", "ablation", "crop", "checkpoint_every", "split",
)


def _run_config(args: argparse.Namespace) -> RunConfig:
    flags = {key: getattr(args, key, None) for key in _RUN_KEYS}
    return resolve(args.config, flags)


def _record(out_dir: Path, command: str, run: RunConfig,
            **paths: Any) -> None:
    values: Dict[str, Any] = {"command": command}
    values.update({k: str(v) for k, v in paths.items() if v is not None})
    values.update(run.as_record())
    write_run_config(out_dir / RUN_CONFIG_NAME, values)


# -- synth -----------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    run = _run_config(args)
    if run.n is None:
        raise ConfigError("N is required (--n or N= in the config file)")
    out = Path(args.out)
    manifest = build_dataset(args.src, out, run.n, run.train_frac,
                             run.seed, run.crf())
    _record(out, "synth", run, src=args.src, out=out)
    n_train = len(manifest.split("train"))
    print(f"Wrote {len(manifest.records)} pairs ({n_train} train / "
          f"{len(manifest.records) - n_train} test) to "
          f"{out / MANIFEST_NAME}")
    return 0


# -- train / ablate --------------------------------------------------------

def cmd_train(args: argparse.Namespace) -> int:
    run = _run_config(args)
    manifest = read_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / CHECKPOINT_NAME

    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
        weights = weights_from_checkpoint(resume)
        if weights.config.ablation != run.ablation:
            raise ConfigError(
                f"checkpoint was trained as '{weights.config.ablation}', "
                f"not '{run.ablation}'")
    else:
        cfg = apply_ablation(run.model_config(), run.ablation)
        weights = build_model(cfg, seed=run.seed)

    result = train_loop(weights, manifest,
                        run.train_config(str(ckpt_path)),
                        log_path=out / TRAIN_LOG_NAME, resume=resume)
    _record(out, args.command, run, manifest=args.manifest, out=out,
            resume=args.resume)
    if result.log:
        first, last = result.log[0][1], result.log[-1][1]
        print(f"Trained {len(result.log)} epochs: L1 {first:.6f} -> "
              f"{last:.6f}")
    print(f"Checkpoint: {ckpt_path}")
    return 0


# -- infer -----------------------------------------------------------------

def correct_image(img: np.ndarray, weights: ModelWeights) -> np.ndarray:
    """Run the network on one (3, H, W) image; output clipped to [0, 1]."""
    if img.shape[0] != IMAGE_CHANNELS or min(img.shape[1:]) < MIN_SIDE:
        raise InputError(f"image must be RGB and at least "
                         f"{MIN_SIDE}x{MIN_SIDE}, got {img.shape}")
    out = fdvm_forward(Tensor(img[None]), weights).data[0]
    return np.clip(out, 0.0, 1.0)


def infer_folder(weights: ModelWeights, sources: Sequence[Path],
                 out_dir: Path) -> List[str]:
    """Write one PNG per source; returns the sources that failed."""
    failed: List[str] = []
    for src in sources:
        try:
            corrected = correct_image(load_image(src), weights)
            save_image(out_dir / f"{src.stem}.png", corrected)
        except (OSError, ValueError) as e:
            logger.debug("inference failed for %s", src, exc_info=True)
            print(f"Error: {src}: {e}")
            failed.append(str(src))
    return failed


def _sources(path: str) -> List[Path]:
    target = Path(path)
    if target.is_dir():
        found = list_images(target)
        if not found:
            raise InputError(f"no images found in '{target}'")
        return found
    if not target.exists():
        raise FileNotFoundError(f"input '{target}' does not exist")
    return [target]


def cmd_infer(args: argparse.Namespace) -> int:
    weights = weights_from_checkpoint(load_checkpoint(args.checkpoint))
    sources = _sources(args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failed = infer_folder(weights, sources, out)
    run = _run_config(args)
    _record(out, "infer", run, checkpoint=args.checkpoint,
            input=args.input, out=out)
    print(f"Corrected {len(sources) - len(failed)} of {len(sources)} "
          f"images into {out}")
    if failed:
        raise PartialFailure(f"{len(failed)} images failed", len(failed))
    return 0


# -- eval ------------------------------------------------------------------

def cmd_eval(args: argparse.Namespace) -> int:
    run = _run_config(args)
    manifest = read_manifest(args.manifest)
    report_path = Path(args.report)
    out = report_path.parent
    out.mkdir(parents=True, exist_ok=True)

    if args.baseline:
        report = evaluate_inputs(manifest, run.split)
    elif args.checkpoint:
        weights = weights_from_checkpoint(load_checkpoint(args.checkpoint))
        pred_dir = out / "pred"
        pred_dir.mkdir(parents=True, exist_ok=True)
        sources = [manifest.resolve(r.degraded_path)
                   for r in manifest.split(run.split)]
        infer_folder(weights, sources, pred_dir)
        report = evaluate(manifest, pred_dir, run.split)
    else:
        report = evaluate(manifest, args.pred, run.split)

    write_report(report_path, report)
    _record(out, "eval", run, manifest=args.manifest, pred=args.pred,
            checkpoint=args.checkpoint, report=report_path)
    print(report_lines(report)[-1])
    if report.missing:
        raise PartialFailure(
            f"{len(report.missing)} predictions missing", len(report.missing))
    return 0


# -- check / params --------------------------------------------------------

def cmd_check(args: argparse.Namespace) -> int:
    results = run_selfcheck(inject_fault=args.inject_fault, seed=args.seed
                            if args.seed is not None else 0)
    for result in results:
        print(result.line())
    failed = sorted({r.module for r in results if not r.passed})
    if failed:
        print(f"Self-check failed in: {', '.join(failed)}")
        return 1
    print(f"All {len(results)} checks passed.")
    return 0


def cmd_params(args: argparse.Namespace) -> int:
    run = _run_config(args)
    cfg = apply_ablation(run.model_config(), run.ablation)
    weights = build_model(cfg, seed=run.seed)
    print(f"closed form: {count_parameters(cfg)}")
    print(f"measured:    {weights.num_parameters()}")
    for group, count in sorted(parameter_groups(weights).items()):
        print(f"  {group}: {count}")
    return 0


def cmd_init(args: argparse.Namespace) -> int:
    """Write an untrained checkpoint (identity at init)."""
    run = _run_config(args)
    cfg = apply_ablation(run.model_config(), run.ablation)
    save_checkpoint(checkpoint_from_weights(build_model(cfg, run.seed)),
                    args.out)
    print(f"Checkpoint: {args.out}")
    return 0


# -- argument parsing ------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="KEY=VALUE run configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--verbose", action="store_true")


def _model_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--channels", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--state-dim", dest="state_dim", type=int)
    p.add_argument("--ssm-fixed-hw", dest="ssm_fixed_hw", type=int)


def _train_options(p: argparse.ArgumentParser, ablation_required: bool
                   ) -> None:
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _model_options(p)
    p.add_argument("--patch", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--ablation", choices=ABLATIONS,
                   required=ablation_required)
    p.add_argument("--crop", choices=CROP_MODES)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fdvm",
        description="Frequency-domain exposure correction.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize exposure pairs")
    _common(p)
    p.add_argument("--src", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--train-frac", dest="train_frac", type=float)
    p.add_argument("--gain", type=float)
    p.add_argument("--crf-a", dest="crf_a", type=float)
    p.add_argument("--crf-b", dest="crf_b", type=float)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("train", help="train on a manifest")
    _common(p)
    _train_options(p, ablation_required=False)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("ablate", help="train one ablation variant")
    _common(p)
    _train_options(p, ablation_required=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("infer", help="correct images with a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="image file or folder")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("eval", help="PSNR/SSIM report for a split")
    _common(p)
    p.add_argument("--manifest", required=True)
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--pred", help="folder of predictions")
    source.add_argument("--checkpoint", help="run inference first")
    source.add_argument("--baseline", action="store_true",
                        help="score the degraded inputs")
    p.add_argument("--report", required=True)
    p.add_argument("--split", choices=("train", "test"))
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("check", help="run the built-in self-check")
    _common(p)
    p.add_argument("--inject-fault", dest="inject_fault", choices=FAULTS)
    p.set_defaults(handler=cmd_check)

    p = sub.add_parser("params", help="print parameter counts")
    _common(p)
    _model_options(p)
    p.add_argument("--ablation", choices=ABLATIONS)
    p.set_defaults(handler=cmd_params)

    p = sub.add_parser("init", help="write an untrained checkpoint")
    _common(p)
    _model_options(p)
    p.add_argument("--ablation", choices=ABLATIONS)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_init)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    status: int = args.handler(args)
    return status
