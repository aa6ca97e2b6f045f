"""Selective state-space scan with input-dependent B, C and step size.

Per token t, channel c and state n::

    delta = softplus(w_dt[c] * u[t, c] + b_dt)
    B_t   = u_t @ w_b            C_t = u_t @ w_c
    a_bar = exp(delta * A[c, n])  with A = -exp(a_log)
    h_t   = a_bar * h_{t-1} + delta * B_t[n] * u[t, c]
    y_t   = sum_n C_t[n] * h_t[c, n] + d_skip[c] * u[t, c]

The recurrence over L is sequential. ``scan_reference`` is a naive twin
kept for differential testing and must agree with ``selective_scan``
bit for bit.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .tensor import Tensor, record

logger = logging.getLogger(__name__)

DEFAULT_STATE_DIM = 16
DT_INIT = 0.01


@dataclass
class SsmParams:
    """Parameters of one selective-scan layer over C channels, N states."""
    a_log: Tensor
    d_skip: Tensor
    w_dt: Tensor
    b_dt: Tensor
    w_b: Tensor
    w_c: Tensor

    def __post_init__(self) -> None:
        c, n = self.a_log.shape
        expected = {
            "d_skip": (c,),
            "w_dt": (c, 1),
            "b_dt": (1,),
            "w_b": (c, n),
            "w_c": (c, n),
        }
        for name, dims in expected.items():
            got = getattr(self, name).shape
            if got != dims:
                raise ShapeError(f"ssm {name} must be {dims}, got {got}")

    @property
    def channels(self) -> int:
        return self.a_log.shape[0]

    @property
    def state_dim(self) -> int:
        return self.a_log.shape[1]

    def named(self) -> Dict[str, Tensor]:
        return {
            "a_log": self.a_log,
            "d_skip": self.d_skip,
            "w_dt": self.w_dt,
            "b_dt": self.b_dt,
            "w_b": self.w_b,
            "w_c": self.w_c,
        }

    def transition(self) -> np.ndarray:
        """The continuous-time diagonal A = -exp(a_log), shape (C, N)."""
        return -np.exp(self.a_log.data)


class Discretized(NamedTuple):
    """Input-dependent coefficients of one scan, all time-aligned."""
    z: np.ndarray        # (B, L, C) pre-softplus step size
    delta: np.ndarray    # (B, L, C)
    b_in: np.ndarray     # (B, L, N)
    c_out: np.ndarray    # (B, L, N)
    a_bar: np.ndarray    # (B, L, C, N)
    bu: np.ndarray       # (B, L, C, N)


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -z))


def discretize(u: np.ndarray, params: SsmParams) -> Discretized:
    """Evaluate step sizes, projections and the Euler-style discretisation."""
    z = u * params.w_dt.data[:, 0] + params.b_dt.data[0]
    delta = _softplus(z)
    b_in = u @ params.w_b.data
    c_out = u @ params.w_c.data
    a = params.transition()
    a_bar = np.exp(delta[..., None] * a)
    bu = delta[..., None] * b_in[:, :, None, :] * u[..., None]
    return Discretized(z, delta, b_in, c_out, a_bar, bu)


def _check_input(u: Tensor, params: SsmParams) -> None:
    if u.ndim != 3 or u.shape[2] != params.channels:
        raise ShapeError(f"scan input must be (B, L, {params.channels}), "
                         f"got {u.shape}")
    if not np.all(np.isfinite(u.data)):
        raise NumericError("selective scan received non-finite input")


def _run_recurrence(a_bar: np.ndarray, bu: np.ndarray) -> np.ndarray:
    """All states h_1..h_L, shape (B, L, C, N), with h_0 = 0."""
    a_t = np.ascontiguousarray(np.moveaxis(a_bar, 1, 0))
    b_t = np.ascontiguousarray(np.moveaxis(bu, 1, 0))
    states = np.empty_like(b_t)
    h = np.zeros_like(b_t[0])
    for t in range(b_t.shape[0]):
        h = a_t[t] * h + b_t[t]
        states[t] = h
    return np.ascontiguousarray(np.moveaxis(states, 0, 1))


def scan_discrete(
    a_bar: np.ndarray,
    bu: np.ndarray,
    c_out: np.ndarray,
    d_skip: np.ndarray,
    u: np.ndarray,
) -> np.ndarray:
    """Recurrence and readout for already discretised coefficients.

    ``a_bar`` and ``bu`` are (B, L, C, N), ``c_out`` is (B, L, N),
    ``d_skip`` is (C,) and ``u`` is (B, L, C).
    """
    states = _run_recurrence(a_bar, bu)
    return (c_out[:, :, None, :] * states).sum(axis=-1) + d_skip * u


def selective_scan(u: Tensor, params: SsmParams) -> Tensor:
    """Differentiable selective scan of a (B, L, C) sequence."""
    _check_input(u, params)
    x = u.data
    disc = discretize(x, params)
    states = _run_recurrence(disc.a_bar, disc.bu)
    d = params.d_skip.data
    y = (disc.c_out[:, :, None, :] * states).sum(axis=-1) + d * x

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray, ...]:
        a = params.transition()
        w_dt = params.w_dt.data[:, 0]
        w_b, w_c = params.w_b.data, params.w_c.data

        d_c_out = (g[..., None] * states).sum(axis=2)
        dh_direct = g[..., None] * disc.c_out[:, :, None, :]

        # reverse recurrence: dh_t = direct_t + a_bar_{t+1} * dh_{t+1}
        length = x.shape[1]
        dh = np.empty_like(dh_direct)
        carry = np.zeros_like(dh_direct[:, 0])
        for t in range(length - 1, -1, -1):
            carry = dh_direct[:, t] + carry
            dh[:, t] = carry
            carry = disc.a_bar[:, t] * carry

        prev = np.zeros_like(states)
        prev[:, 1:] = states[:, :-1]
        d_abar = dh * prev
        d_bu = dh

        da_common = d_abar * disc.a_bar
        d_delta = (da_common * a).sum(axis=-1)
        d_a = (da_common * disc.delta[..., None]).sum(axis=(0, 1))
        d_a_log = d_a * a

        d_delta += (d_bu * disc.b_in[:, :, None, :]).sum(axis=-1) * x
        d_b_in = (d_bu * (disc.delta * x)[..., None]).sum(axis=2)
        dx = (d_bu * disc.b_in[:, :, None, :]).sum(axis=-1) * disc.delta

        dx += d_b_in @ w_b.T + d_c_out @ w_c.T
        flat_x = x.reshape(-1, x.shape[2])
        d_w_b = flat_x.T @ d_b_in.reshape(-1, w_b.shape[1])
        d_w_c = flat_x.T @ d_c_out.reshape(-1, w_c.shape[1])

        dz = d_delta * _sigmoid(disc.z)
        dx += dz * w_dt
        d_w_dt = (dz * x).sum(axis=(0, 1))[:, None]
        d_b_dt = np.array([dz.sum()])

        dx += g * d
        d_d = (g * x).sum(axis=(0, 1))
        return dx, d_a_log, d_d, d_w_dt, d_b_dt, d_w_b, d_w_c

    inputs = (u, params.a_log, params.d_skip, params.w_dt, params.b_dt,
              params.w_b, params.w_c)
    return record("selective_scan", inputs, y, grad_fn)


def scan_reference(u: Tensor, params: SsmParams) -> Tensor:
    """Naive per-step scan that materialises every state (no gradient)."""
    _check_input(u, params)
    x = u.data
    disc = discretize(x, params)
    d = params.d_skip.data
    states: List[np.ndarray] = []
    outputs: List[np.ndarray] = []
    h: Optional[np.ndarray] = None
    for t in range(x.shape[1]):
        if h is None:
            h = np.zeros_like(disc.bu[:, t])
        h = disc.a_bar[:, t] * h + disc.bu[:, t]
        states.append(h)
        readout = (disc.c_out[:, t, None, :] * h).sum(axis=-1)
        outputs.append(readout + d * x[:, t])
    return Tensor(np.stack(outputs, axis=1))


def init_ssm(
    channels: int,
    state_dim: int,
    rng: np.random.Generator,
) -> SsmParams:
    """S4D-real initialisation: A[c] = -(1..N), d_skip = 1, dt ~= 0.01."""
    if channels < 1 or state_dim < 1:
        raise ConfigError("ssm needs channels >= 1 and state_dim >= 1")
    a_log = np.tile(np.log(np.arange(1, state_dim + 1, dtype=np.float64)),
                    (channels, 1))
    bound = 1.0 / np.sqrt(channels)
    return SsmParams(
        a_log=Tensor(a_log, requires_grad=True),
        d_skip=Tensor(np.ones(channels), requires_grad=True),
        w_dt=Tensor(rng.uniform(-0.1, 0.1, (channels, 1)),
                    requires_grad=True),
        b_dt=Tensor([np.log(np.expm1(DT_INIT))], requires_grad=True),
        w_b=Tensor(rng.uniform(-bound, bound, (channels, state_dim)),
                   requires_grad=True),
        w_c=Tensor(rng.uniform(-bound, bound, (channels, state_dim)),
                   requires_grad=True),
    )
