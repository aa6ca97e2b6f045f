"""C-SSM blocks and the dual-path amplitude/phase network.

Each path lifts its spectral map to C feature channels, runs
``blocks_per_path`` C-SSM blocks and projects back to 3 channels. Block k
of one path gates its merged features with the cross map of block k of
the other path. Residual projections and heads start at zero, so a fresh
network reproduces its input.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Mapping, NamedTuple, Optional, Tuple

import numpy as np

from . import spectral
from .errors import ConfigError, ContractError, ShapeError
from .ssm import DEFAULT_STATE_DIM, SsmParams, init_ssm, selective_scan
from .tensor import (
    Tensor,
    add,
    bilinear_resize,
    conv1d_depthwise,
    conv2d,
    hadamard,
    layer_norm,
    linear,
    relu,
    softmax,
    to_image,
    to_sequence,
)
from .utils import rng_stream

logger = logging.getLogger(__name__)

ABLATIONS = ("full", "no_cross_attention", "no_ssm")
IMAGE_CHANNELS = 3


@dataclass(frozen=True)
class ModelConfig:
    """Network hyper-parameters."""
    channels: int = 32
    blocks_per_path: int = 8
    ssm_state_dim: int = DEFAULT_STATE_DIM
    ssm_fixed_hw: int = 64
    ablation: str = "full"

    def __post_init__(self) -> None:
        if self.channels < 1:
            raise ConfigError("CHANNELS must be >= 1")
        if self.blocks_per_path < 1:
            raise ConfigError("BLOCKS must be >= 1")
        if self.ssm_state_dim < 1:
            raise ConfigError("STATE_DIM must be >= 1")
        if self.ssm_fixed_hw < 8:
            raise ConfigError("SSM_FIXED_HW must be >= 8")
        if self.ablation not in ABLATIONS:
            raise ConfigError(
                f"ABLATION must be one of {', '.join(ABLATIONS)}, "
                f"got '{self.ablation}'")

    @property
    def uses_cross_attention(self) -> bool:
        return self.ablation != "no_cross_attention"

    @property
    def uses_ssm(self) -> bool:
        return self.ablation != "no_ssm"


@dataclass
class Conv2dWeights:
    weight: Tensor
    bias: Tensor


@dataclass
class Conv1dWeights:
    weight: Tensor
    bias: Tensor


@dataclass
class LinearWeights:
    weight: Tensor
    bias: Tensor


@dataclass
class CssmBlockWeights:
    """Sub-layers of one C-SSM block.

    Exactly one of ``ssm`` and ``ssm_substitute`` is set; the latter is
    the linear layer used by the ``no_ssm`` ablation.
    """
    conv_in: Conv2dWeights
    ln_gamma: Tensor
    ln_beta: Tensor
    conv_branch1: Conv1dWeights
    conv_branch2: Conv1dWeights
    conv_cross: Conv1dWeights
    proj_out: LinearWeights
    ssm: Optional[SsmParams] = None
    ssm_substitute: Optional[LinearWeights] = None

    def named(self) -> Iterator[Tuple[str, Tensor]]:
        yield "conv_in.weight", self.conv_in.weight
        yield "conv_in.bias", self.conv_in.bias
        yield "ln.gamma", self.ln_gamma
        yield "ln.beta", self.ln_beta
        if self.ssm is not None:
            for name, t in self.ssm.named().items():
                yield f"ssm.{name}", t
        if self.ssm_substitute is not None:
            yield "ssm_substitute.weight", self.ssm_substitute.weight
            yield "ssm_substitute.bias", self.ssm_substitute.bias
        for name in ("conv_branch1", "conv_branch2", "conv_cross"):
            layer = getattr(self, name)
            yield f"{name}.weight", layer.weight
            yield f"{name}.bias", layer.bias
        yield "proj_out.weight", self.proj_out.weight
        yield "proj_out.bias", self.proj_out.bias


@dataclass
class ModelWeights:
    """All parameters of the network, addressed by dotted names."""
    config: ModelConfig
    lift_amp: Conv2dWeights
    lift_phase: Conv2dWeights
    head_amp: Conv2dWeights
    head_phase: Conv2dWeights
    blocks_amp: List[CssmBlockWeights] = field(default_factory=list)
    blocks_phase: List[CssmBlockWeights] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.blocks_amp) != len(self.blocks_phase):
            raise ContractError("both paths need the same number of blocks")

    def named_parameters(self) -> Dict[str, Tensor]:
        table: Dict[str, Tensor] = {}
        for prefix, conv in (("lift_amp", self.lift_amp),
                             ("lift_phase", self.lift_phase)):
            table[f"{prefix}.weight"] = conv.weight
            table[f"{prefix}.bias"] = conv.bias
        for path in ("blocks_amp", "blocks_phase"):
            for k, block in enumerate(getattr(self, path)):
                for name, t in block.named():
                    table[f"{path}.{k}.{name}"] = t
        for prefix, conv in (("head_amp", self.head_amp),
                             ("head_phase", self.head_phase)):
            table[f"{prefix}.weight"] = conv.weight
            table[f"{prefix}.bias"] = conv.bias
        return table

    def num_parameters(self) -> int:
        return sum(t.size for t in self.named_parameters().values())

    def load_parameters(self, table: Mapping[str, np.ndarray]) -> None:
        """Copy values in by name; the name sets must match exactly."""
        own = self.named_parameters()
        missing = sorted(set(own) - set(table))
        extra = sorted(set(table) - set(own))
        if missing or extra:
            raise ContractError(
                f"parameter names differ: missing {missing[:3]}, "
                f"unexpected {extra[:3]}")
        for name, t in own.items():
            values = np.asarray(table[name], dtype=np.float64)
            if values.shape != t.shape:
                raise ShapeError(f"{name}: expected {t.shape}, "
                                 f"got {values.shape}")
            t.data = values.copy()


# -- construction ----------------------------------------------------------

def _kaiming(rng: np.random.Generator, dims: Tuple[int, ...],
             fan_in: int) -> Tensor:
    """Kaiming-uniform with ReLU gain: U(-sqrt(6 / fan_in), +...)."""
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, dims), requires_grad=True)


def _zeros(*dims: int) -> Tensor:
    return Tensor(np.zeros(dims), requires_grad=True)


def _conv2d(rng: np.random.Generator, c_in: int, c_out: int,
            zero: bool = False) -> Conv2dWeights:
    weight = _zeros(c_out, c_in, 3, 3) if zero \
        else _kaiming(rng, (c_out, c_in, 3, 3), c_in * 9)
    return Conv2dWeights(weight, _zeros(c_out))


def _conv1d(rng: np.random.Generator, channels: int) -> Conv1dWeights:
    return Conv1dWeights(_kaiming(rng, (channels, 3), 3), _zeros(channels))


def _linear(rng: np.random.Generator, c_in: int, c_out: int,
            zero: bool = False) -> LinearWeights:
    weight = _zeros(c_in, c_out) if zero \
        else _kaiming(rng, (c_in, c_out), c_in)
    return LinearWeights(weight, _zeros(c_out))


def _build_block(cfg: ModelConfig,
                 rng: np.random.Generator) -> CssmBlockWeights:
    c = cfg.channels
    conv_in = _conv2d(rng, c, c)
    ssm = init_ssm(c, cfg.ssm_state_dim, rng) if cfg.uses_ssm else None
    substitute = None if cfg.uses_ssm else _linear(rng, c, c)
    return CssmBlockWeights(
        conv_in=conv_in,
        ln_gamma=Tensor(np.ones(c), requires_grad=True),
        ln_beta=_zeros(c),
        conv_branch1=_conv1d(rng, c),
        conv_branch2=_conv1d(rng, c),
        conv_cross=_conv1d(rng, c),
        proj_out=_linear(rng, c, c, zero=True),
        ssm=ssm,
        ssm_substitute=substitute,
    )


def build_model(cfg: ModelConfig, seed: int = 0) -> ModelWeights:
    """Fresh weights; reproducible under ``seed`` (``init`` sub-stream)."""
    rng = rng_stream(seed, "init")
    c = cfg.channels
    lift_amp = _conv2d(rng, IMAGE_CHANNELS, c)
    lift_phase = _conv2d(rng, IMAGE_CHANNELS, c)
    blocks_amp = [_build_block(cfg, rng) for _ in range(cfg.blocks_per_path)]
    blocks_phase = [_build_block(cfg, rng)
                    for _ in range(cfg.blocks_per_path)]
    weights = ModelWeights(
        config=cfg,
        lift_amp=lift_amp,
        lift_phase=lift_phase,
        head_amp=_conv2d(rng, c, IMAGE_CHANNELS, zero=True),
        head_phase=_conv2d(rng, c, IMAGE_CHANNELS, zero=True),
        blocks_amp=blocks_amp,
        blocks_phase=blocks_phase,
    )
    logger.info("built model: %d parameters (%s)",
                weights.num_parameters(), cfg)
    return weights


def apply_ablation(cfg: ModelConfig, ablation: str) -> ModelConfig:
    """Config with the given wiring; build_model then realises it."""
    if ablation not in ABLATIONS:
        raise ConfigError(
            f"unknown ablation '{ablation}' "
            f"(expected one of {', '.join(ABLATIONS)})")
    return replace(cfg, ablation=ablation)


def count_parameters(cfg: ModelConfig) -> int:
    """Closed-form parameter count for ``cfg``."""
    c, n = cfg.channels, cfg.ssm_state_dim
    middle = 3 * c * n + 2 * c + 1 if cfg.uses_ssm else c * c + c
    per_block = (9 * c * c + c) + 2 * c + middle + 3 * (3 * c + c) \
        + (c * c + c)
    lift = 2 * (IMAGE_CHANNELS * 9 * c + c)
    head = 2 * (c * 9 * IMAGE_CHANNELS + IMAGE_CHANNELS)
    return 2 * cfg.blocks_per_path * per_block + lift + head


def parameter_groups(weights: ModelWeights) -> Dict[str, int]:
    """Parameter counts grouped by layer kind."""
    groups: Dict[str, int] = {}
    for name, t in weights.named_parameters().items():
        parts = name.split(".")
        if parts[0].startswith("blocks_"):
            kind = parts[2]
            if kind.startswith("conv_branch") or kind == "conv_cross":
                kind = "conv1d"
        else:
            kind = parts[0].split("_")[0]
        groups[kind] = groups.get(kind, 0) + t.size
    return groups


# -- forward ---------------------------------------------------------------

class BlockFront(NamedTuple):
    """Block state before the two paths exchange cross maps."""
    branch: Tensor
    attention: Tensor
    cross_out: Optional[Tensor]


def block_front(f_in: Tensor, w: CssmBlockWeights,
                cfg: ModelConfig) -> BlockFront:
    """Conv + ReLU, fix to the SSM grid, LayerNorm, both branches."""
    x = relu(conv2d(f_in, w.conv_in.weight, w.conv_in.bias))
    side = cfg.ssm_fixed_hw
    x = bilinear_resize(x, side, side)
    seq = layer_norm(to_sequence(x), w.ln_gamma, w.ln_beta)

    branch = conv1d_depthwise(seq, w.conv_branch1.weight,
                              w.conv_branch1.bias)
    if w.ssm is not None:
        branch = selective_scan(branch, w.ssm)
    elif w.ssm_substitute is not None:
        branch = linear(branch, w.ssm_substitute.weight,
                        w.ssm_substitute.bias)
    else:
        raise ContractError("block has neither ssm nor its substitute")

    attention = softmax(
        conv1d_depthwise(seq, w.conv_branch2.weight, w.conv_branch2.bias),
        axis=-1)
    cross_out = None
    if cfg.uses_cross_attention:
        cross_out = softmax(
            conv1d_depthwise(attention, w.conv_cross.weight,
                             w.conv_cross.bias),
            axis=-1)
    return BlockFront(branch, attention, cross_out)


def block_back(f_in: Tensor, front: BlockFront, cross_in: Optional[Tensor],
               w: CssmBlockWeights, cfg: ModelConfig) -> Tensor:
    """Merge, project, resize back and add the shortcut."""
    merged = hadamard(front.branch, front.attention)
    if cross_in is not None:
        if not cfg.uses_cross_attention:
            raise ContractError("cross map given to a no_cross_attention "
                                "block")
        if cross_in.shape != merged.shape:
            raise ShapeError(f"cross map {cross_in.shape} does not match "
                             f"block sequence {merged.shape}")
        merged = hadamard(merged, cross_in)
    projected = linear(merged, w.proj_out.weight, w.proj_out.bias)
    side = cfg.ssm_fixed_hw
    residual = bilinear_resize(to_image(projected, side, side),
                               f_in.shape[2], f_in.shape[3])
    return add(residual, f_in)


def cssm_block(
    f_in: Tensor,
    cross_in: Optional[Tensor],
    w: CssmBlockWeights,
    cfg: ModelConfig,
) -> Tuple[Tensor, Optional[Tensor]]:
    """One C-SSM block; returns (features, cross map for the other path).

    The cross map is ``None`` under the ``no_cross_attention`` ablation.
    """
    front = block_front(f_in, w, cfg)
    return block_back(f_in, front, cross_in, w, cfg), front.cross_out


def fdvm_paths(img: Tensor, w: ModelWeights) -> spectral.SpectralPair:
    """Run both paths; returns compressed amplitude and normalised phase."""
    if img.ndim != 4 or img.shape[1] != IMAGE_CHANNELS:
        raise ShapeError(f"expected (B, 3, H, W) images, got {img.shape}")
    cfg = w.config
    pair = spectral.analyze(img)
    amp_in, pha_in = pair.amplitude, pair.phase

    feat_a = conv2d(amp_in, w.lift_amp.weight, w.lift_amp.bias)
    feat_p = conv2d(pha_in, w.lift_phase.weight, w.lift_phase.bias)
    for blk_a, blk_p in zip(w.blocks_amp, w.blocks_phase):
        front_a = block_front(feat_a, blk_a, cfg)
        front_p = block_front(feat_p, blk_p, cfg)
        feat_a = block_back(feat_a, front_a, front_p.cross_out, blk_a, cfg)
        feat_p = block_back(feat_p, front_p, front_a.cross_out, blk_p, cfg)

    amp_out = add(amp_in, conv2d(feat_a, w.head_amp.weight, w.head_amp.bias))
    pha_out = add(pha_in,
                  conv2d(feat_p, w.head_phase.weight, w.head_phase.bias))
    return spectral.SpectralPair(amp_out, pha_out, compressed=True,
                                 normalized_phase=True)


def fdvm_forward(img: Tensor, w: ModelWeights) -> Tensor:
    """Exposure-corrected images with the input's shape."""
    return spectral.synthesize(fdvm_paths(img, w))
