"""Binary checkpoint format.

Layout (little endian)::

    b"FDVM"  u32 version  u32 parameter count
    per parameter:
        u16 name length, UTF-8 name, u8 dtype (0 = f32), u8 rank,
        u32 dims[rank], f32 payload
    then tagged sections, each ``tag(4) u32 length payload``:
        CONF  KEY=VALUE text: model config and epoch
        ADAM  u32 step, then m and v payloads in parameter order
        RNGS  JSON of the shuffle generator state

Files are written under a temporary name and renamed into place, and
nothing is returned from a load until the whole file has parsed.
"""

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .errors import (
    CheckpointFormatError,
    CheckpointVersionError,
    ConfigError,
    ContractError,
    ShapeError,
)
from .model import ModelConfig, ModelWeights, build_model
from .optim import AdamState
from .utils import PathLike

logger = logging.getLogger(__name__)

MAGIC = b"FDVM"
VERSION = 1
DTYPE_F32 = 0
_F32 = np.dtype("<f4")


@dataclass
class Checkpoint:
    config: ModelConfig
    params: Dict[str, np.ndarray]
    adam: Optional[AdamState] = None
    rng_state: Optional[Dict[str, Any]] = None
    epoch: int = 0
    version: int = VERSION
    extra: Dict[str, str] = field(default_factory=dict)


def checkpoint_from_weights(
    weights: ModelWeights,
    adam: Optional[AdamState] = None,
    rng_state: Optional[Dict[str, Any]] = None,
    epoch: int = 0,
) -> Checkpoint:
    params = {name: t.data.copy()
              for name, t in weights.named_parameters().items()}
    return Checkpoint(weights.config, params, adam, rng_state, epoch)


def weights_from_checkpoint(ckpt: Checkpoint) -> ModelWeights:
    weights = build_model(ckpt.config, seed=0)
    try:
        weights.load_parameters(ckpt.params)
    except (ContractError, ShapeError) as e:
        raise CheckpointFormatError(f"parameters do not fit config: {e}")
    return weights


# -- encoding --------------------------------------------------------------

def _section(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<I", len(payload)) + payload


def _config_text(ckpt: Checkpoint) -> str:
    cfg = ckpt.config
    values = {
        "CHANNELS": cfg.channels,
        "BLOCKS": cfg.blocks_per_path,
        "STATE_DIM": cfg.ssm_state_dim,
        "SSM_FIXED_HW": cfg.ssm_fixed_hw,
        "ABLATION": cfg.ablation,
        "EPOCH": ckpt.epoch,
    }
    return "\n".join(f"{k}={v}" for k, v in values.items())


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    parts: List[bytes] = [MAGIC, struct.pack("<II", ckpt.version,
                                             len(ckpt.params))]
    for name, values in ckpt.params.items():
        raw_name = name.encode("utf-8")
        arr = np.asarray(values)
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", DTYPE_F32, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype(_F32).tobytes())

    parts.append(_section(b"CONF", _config_text(ckpt).encode("utf-8")))
    if ckpt.adam is not None:
        body = [struct.pack("<I", ckpt.adam.t)]
        for name, values in ckpt.params.items():
            zeros = np.zeros_like(values)
            body.append(ckpt.adam.m.get(name, zeros).astype(_F32).tobytes())
            body.append(ckpt.adam.v.get(name, zeros).astype(_F32).tobytes())
        parts.append(_section(b"ADAM", b"".join(body)))
    if ckpt.rng_state is not None:
        text = json.dumps(ckpt.rng_state, sort_keys=True)
        parts.append(_section(b"RNGS", text.encode("utf-8")))
    return b"".join(parts)


def save_checkpoint(ckpt: Checkpoint, path: PathLike) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = target.with_name(target.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(encode_checkpoint(ckpt))
    os.replace(tmp, target)
    logger.info("saved checkpoint %s (epoch %d)", target, ckpt.epoch)


# -- decoding --------------------------------------------------------------

class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(f"truncated while reading {what}",
                                        self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str) -> Tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def array(self, dims: Tuple[int, ...], what: str) -> np.ndarray:
        count = int(np.prod(dims)) if dims else 1
        raw = self.take(count * _F32.itemsize, what)
        return np.frombuffer(raw, dtype=_F32).astype(np.float64).reshape(dims)

    @property
    def done(self) -> bool:
        return self.pos >= len(self.data)


def _parse_config(text: str, offset: int) -> Tuple[ModelConfig, int]:
    values: Dict[str, str] = {}
    for line in text.splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointFormatError("malformed CONF line", offset)
        values[key.strip().upper()] = value.strip()
    try:
        cfg = ModelConfig(
            channels=int(values["CHANNELS"]),
            blocks_per_path=int(values["BLOCKS"]),
            ssm_state_dim=int(values["STATE_DIM"]),
            ssm_fixed_hw=int(values["SSM_FIXED_HW"]),
            ablation=values["ABLATION"],
        )
        epoch = int(values.get("EPOCH", "0"))
    except (KeyError, ValueError, ConfigError) as e:
        raise CheckpointFormatError(f"bad CONF section: {e}", offset)
    return cfg, epoch


def decode_checkpoint(data: bytes) -> Checkpoint:
    reader = _Reader(data)
    if reader.take(4, "magic") != MAGIC:
        raise CheckpointFormatError("not an FDVM checkpoint (bad magic)", 0)
    (version,) = reader.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointVersionError(
            f"unsupported checkpoint version {version} "
            f"(expected {VERSION})", 4)
    (count,) = reader.unpack("<I", "parameter count")

    params: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H", "name length")
        start = reader.pos
        try:
            name = reader.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointFormatError("parameter name is not UTF-8", start)
        if name in params:
            raise CheckpointFormatError(f"duplicate parameter '{name}'",
                                        start)
        dtype, rank = reader.unpack("<BB", "dtype and rank")
        if dtype != DTYPE_F32:
            raise CheckpointFormatError(f"unknown dtype code {dtype}",
                                        reader.pos - 2)
        dims = reader.unpack(f"<{rank}I", "dims") if rank else ()
        params[name] = reader.array(tuple(dims), f"payload of '{name}'")

    config: Optional[ModelConfig] = None
    epoch = 0
    adam: Optional[AdamState] = None
    rng_state: Optional[Dict[str, Any]] = None
    while not reader.done:
        tag_pos = reader.pos
        tag = reader.take(4, "section tag")
        (length,) = reader.unpack("<I", "section length")
        body_pos = reader.pos
        body = reader.take(length, f"section {tag!r}")
        if tag == b"CONF":
            config, epoch = _parse_config(body.decode("utf-8"), body_pos)
        elif tag == b"ADAM":
            sub = _Reader(body)
            (step,) = sub.unpack("<I", "adam step")
            state = AdamState(t=step)
            for name, values in params.items():
                state.m[name] = sub.array(values.shape, f"adam m of {name}")
                state.v[name] = sub.array(values.shape, f"adam v of {name}")
            adam = state
        elif tag == b"RNGS":
            try:
                rng_state = json.loads(body.decode("utf-8"))
            except ValueError:
                raise CheckpointFormatError("bad RNGS section", body_pos)
        else:
            logger.warning("skipping unknown checkpoint section %r at %d",
                           tag, tag_pos)
    if config is None:
        raise CheckpointFormatError("missing CONF section", reader.pos)
    return Checkpoint(config, params, adam, rng_state, epoch, version)


def load_checkpoint(path: PathLike) -> Checkpoint:
    with open(path, "rb") as f:
        data = f.read()
    return decode_checkpoint(data)
