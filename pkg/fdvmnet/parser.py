"""Run configuration: defaults, optional KEY=VALUE file, then flags."""

from dataclasses import asdict, dataclass, fields
from typing import Any, Callable, Dict, Mapping, Optional

from .degrade import CrfModel
from .errors import ConfigError
from .model import ModelConfig
from .train import CROP_MODES, TrainConfig


@dataclass
class RunConfig:
    """Every option a subcommand can take, resolved to a value."""
    seed: int = 0
    n: Optional[int] = None
    train_frac: float = 5.0 / 6.0
    gain: float = 2.0
    crf_a: float = -0.3293
    crf_b: float = 1.1258
    channels: int = 32
    blocks: int = 8
    state_dim: int = 16
    ssm_fixed_hw: int = 64
    patch: int = 64
    batch: int = 4
    epochs: int = 10
    lr: float = 2e-4
    ablation: str = "full"
    crop: str = "resize"
    checkpoint_every: int = 0
    split: str = "test"

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            channels=self.channels,
            blocks_per_path=self.blocks,
            ssm_state_dim=self.state_dim,
            ssm_fixed_hw=self.ssm_fixed_hw,
            ablation=self.ablation,
        )

    def train_config(self, checkpoint_path: Optional[str] = None
                     ) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            batch_size=self.batch,
            epochs=self.epochs,
            patch_size=self.patch,
            seed=self.seed,
            ablation=self.ablation,
            checkpoint_path=checkpoint_path,
            checkpoint_every=self.checkpoint_every,
            crop=self.crop,
        )

    def crf(self) -> CrfModel:
        return CrfModel(a=self.crf_a, b=self.crf_b, gain_scale=self.gain)

    def as_record(self) -> Dict[str, Any]:
        return asdict(self)


def _parse_int(value: str) -> int:
    return int(value)


def _parse_lower(value: str) -> str:
    return value.strip().lower()


_CONVERTERS: Dict[str, Callable[[str], Any]] = {
    "seed": _parse_int,
    "n": _parse_int,
    "train_frac": float,
    "gain": float,
    "crf_a": float,
    "crf_b": float,
    "channels": _parse_int,
    "blocks": _parse_int,
    "state_dim": _parse_int,
    "ssm_fixed_hw": _parse_int,
    "patch": _parse_int,
    "batch": _parse_int,
    "epochs": _parse_int,
    "lr": float,
    "ablation": _parse_lower,
    "crop": _parse_lower,
    "checkpoint_every": _parse_int,
    "split": _parse_lower,
}


def _validate_config(config: Dict[str, Any]) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    for key in config:
        if key not in known:
            raise ConfigError(f"Unknown key '{key.upper()}'")

    run = RunConfig(**config)
    if run.n is not None and run.n < 1:
        raise ConfigError("N must be >= 1")
    if not 0.0 <= run.train_frac <= 1.0:
        raise ConfigError("TRAIN_FRAC must lie in [0, 1]")
    if run.crop not in CROP_MODES:
        raise ConfigError(f"CROP must be one of {', '.join(CROP_MODES)}")
    if run.split not in ("train", "test"):
        raise ConfigError("SPLIT must be 'train' or 'test'")
    # building each sub-config runs its own checks
    run.model_config()
    run.train_config()
    run.crf()
    return run


def parse_dict(raw: Mapping[str, Any]) -> RunConfig:
    """Parse configuration from a dict (tests/helpers)."""
    return _validate_config({k.lower(): v for k, v in raw.items()})


def read_file(filepath: str) -> Dict[str, Any]:
    """Typed values of a KEY=VALUE file, without defaults.

    Raises:
        FileNotFoundError: If file not found
        ConfigError: On a malformed line, a duplicate or an unknown key
    """
    config: Dict[str, Any] = {}

    def set_once(name: str, val: Any, line_num: int) -> None:
        if name in config:
            raise ConfigError(
                f"Line {line_num}: Duplicate key '{name.upper()}'")
        config[name] = val

    try:
        with open(filepath, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except UnicodeDecodeError as e:
        raise ConfigError(
            "Could not read config file due to encoding error: " + str(e))

    for line_num, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(
                f"Line {line_num}: Invalid format, expected KEY=VALUE")

        key, value = line.split("=", 1)
        name = key.strip().lower()
        convert = _CONVERTERS.get(name)
        if convert is None:
            raise ConfigError(
                f"Line {line_num}: Unknown key '{key.strip().upper()}'")
        try:
            parsed = convert(value.strip())
        except ValueError as e:
            raise ConfigError(f"Line {line_num}: {e}")
        set_once(name, parsed, line_num)
    return config


def parse_file(filepath: str) -> RunConfig:
    """Parse configuration from text file.

    File format (one key=value per line)::

        SEED=7
        CHANNELS=16
        BLOCKS=2
        LR=0.0002
    """
    return _validate_config(read_file(filepath))


def resolve(filepath: Optional[str],
            flags: Mapping[str, Any]) -> RunConfig:
    """Defaults, overridden by the file, overridden by set flags."""
    config: Dict[str, Any] = read_file(filepath) if filepath else {}
    for key, value in flags.items():
        if value is not None:
            config[key] = value
    return _validate_config(config)
