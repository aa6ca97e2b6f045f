from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from .errors import ConfigError, ContractError
from .tensor import Tensor


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ConfigError("LR must be > 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("EPS must be > 0")


@dataclass
class AdamState:
    """First/second moments per parameter name and the step counter."""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: Mapping[str, Tensor],
    state: AdamState,
    cfg: AdamConfig,
) -> AdamState:
    """One bias-corrected Adam update of every parameter, in place."""
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"parameter '{name}' has no gradient")

    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for name, p in params.items():
        g = p.grad
        assert g is not None
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        m_hat = m / bc1
        v_hat = v / bc2
        p.data = p.data - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return state
