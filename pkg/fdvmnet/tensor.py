"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every primitive computes its result with numpy and, when a :class:`Tape`
is active and one of its inputs requires a gradient, appends a node holding
the closure that maps the output gradient to the input gradients. Calling
:func:`backward` walks the tape once in reverse.

Usage::

    with Tape() as tape:
        loss = tensor.mean(tensor.hadamard(x, y))
    tensor.backward(loss, tape)
"""

from __future__ import annotations

import contextvars
import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DomainError, ShapeError

logger = logging.getLogger(__name__)

GradFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

LAYER_NORM_EPS = 1e-5


class Tensor:
    """N-dimensional float64 array with an optional gradient slot."""

    def __init__(self, data: Any, requires_grad: bool = False) -> None:
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if any(extent < 1 for extent in arr.shape):
            raise ShapeError(f"every extent must be >= 1, got {arr.shape}")
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs one element, got {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return hadamard(self, other)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(dims={self.dims}{flag})"


@dataclass
class Node:
    """One executed primitive."""
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    grad_fn: GradFn


_ACTIVE_TAPE: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "fdvmnet_active_tape", default=None
)


class Tape:
    """Ordered record of the primitives executed while it is active.

    A tape is single-writer: one forward/backward pass at a time.
    """

    def __init__(self) -> None:
        self.nodes: List[Node] = []
        self._token: Optional[contextvars.Token] = None

    def __enter__(self) -> "Tape":
        if self._token is not None:
            raise ContractError("tape is already active")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc: object) -> None:
        if self._token is not None:
            _ACTIVE_TAPE.reset(self._token)
            self._token = None

    def __len__(self) -> int:
        return len(self.nodes)


Graph = Tape


def record(
    op: str,
    inputs: Sequence[Tensor],
    out_data: np.ndarray,
    grad_fn: GradFn,
) -> Tensor:
    """Wrap ``out_data`` and log the node on the active tape if needed."""
    tape = _ACTIVE_TAPE.get()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track and tape is not None:
        tape.nodes.append(Node(op, tuple(inputs), out, grad_fn))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every tracked leaf.

    Leaves seen on the tape but not connected to ``loss`` get a zero
    gradient.
    """
    if loss.size != 1:
        raise ContractError(
            f"backward needs a scalar loss, got dims {loss.dims}")

    produced = {id(node.output) for node in tape.nodes}
    leaves: Dict[int, Tensor] = {}
    for node in tape.nodes:
        for t in node.inputs:
            if t.requires_grad and id(t) not in produced:
                leaves.setdefault(id(t), t)
    if loss.requires_grad and id(loss) not in produced:
        leaves.setdefault(id(loss), loss)

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        input_grads = node.grad_fn(g)
        for inp, ig in zip(node.inputs, input_grads):
            if ig is None or not inp.requires_grad:
                continue
            if ig.shape != inp.data.shape:
                raise ContractError(
                    f"{node.op}: gradient dims {ig.shape} "
                    f"!= input dims {inp.data.shape}")
            prev = grads.get(id(inp))
            grads[id(inp)] = ig if prev is None else prev + ig

    for key, leaf in leaves.items():
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)
        g = grads.get(key)
        if g is not None:
            leaf.grad = leaf.grad + g


def _same_dims(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: dims {a.shape} and {b.shape} differ")


# -- elementwise -----------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_dims("add", a, b)
    return record("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_dims("sub", a, b)
    return record("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _same_dims("hadamard", a, b)
    ad, bd = a.data, b.data
    return record("hadamard", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def scale(a: Tensor, factor: float) -> Tensor:
    return record("scale", (a,), a.data * factor, lambda g: (g * factor,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return record("relu", (a,), np.where(mask, a.data, 0.0),
                  lambda g: (g * mask,))


def elementwise(op_tag: str, *operands: Tensor, factor: float = 1.0) -> Tensor:
    """Dispatch ``relu``, ``add``, ``hadamard`` or ``scale`` by name."""
    if op_tag == "relu" and len(operands) == 1:
        return relu(operands[0])
    if op_tag == "add" and len(operands) == 2:
        return add(operands[0], operands[1])
    if op_tag == "hadamard" and len(operands) == 2:
        return hadamard(operands[0], operands[1])
    if op_tag == "scale" and len(operands) == 1:
        return scale(operands[0], factor)
    raise ContractError(
        f"unknown elementwise op '{op_tag}' with {len(operands)} operands")


def log1p(a: Tensor) -> Tensor:
    if np.any(a.data <= -1.0):
        raise DomainError("log1p needs every value > -1")
    ad = a.data
    return record("log1p", (a,), np.log1p(ad), lambda g: (g / (1.0 + ad),))


def expm1(a: Tensor) -> Tensor:
    ex = np.exp(a.data)
    return record("expm1", (a,), np.expm1(a.data), lambda g: (g * ex,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.data.shape
    return record("sum", (a,), np.array([a.data.sum()]),
                  lambda g: (np.full(shape, g[0]),))


def mean(a: Tensor) -> Tensor:
    shape, n = a.data.shape, a.data.size
    return record("mean", (a,), np.array([a.data.mean()]),
                  lambda g: (np.full(shape, g[0] / n),))


# -- layout ----------------------------------------------------------------

def reshape(a: Tensor, dims: Sequence[int]) -> Tensor:
    dims = tuple(int(d) for d in dims)
    if int(np.prod(dims)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} ({a.size} elements) "
                         f"into {dims}")
    shape = a.data.shape
    return record("reshape", (a,), a.data.reshape(dims),
                  lambda g: (g.reshape(shape),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"{axes} is not a permutation of {a.ndim} axes")
    inverse = tuple(int(i) for i in np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(a.data, axes))
    return record("permute", (a,), out,
                  lambda g: (np.transpose(g, inverse),))


def reshape_permute(
    a: Tensor,
    dims: Optional[Sequence[int]] = None,
    axes: Optional[Sequence[int]] = None,
) -> Tensor:
    """Reshape to ``dims`` then permute by ``axes`` (either may be omitted)."""
    out = a
    if dims is not None:
        out = reshape(out, dims)
    if axes is not None:
        out = permute(out, axes)
    return out


def to_sequence(img: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, L, C) with row-major L = h * W + w."""
    if img.ndim != 4:
        raise ShapeError(f"expected (B, C, H, W), got {img.shape}")
    b, c, h, w = img.shape
    return reshape_permute(img, (b, c, h * w), (0, 2, 1))


def to_image(seq: Tensor, height: int, width: int) -> Tensor:
    """Inverse of :func:`to_sequence`."""
    if seq.ndim != 3 or seq.shape[1] != height * width:
        raise ShapeError(
            f"sequence {seq.shape} does not hold a {height}x{width} map")
    b, _, c = seq.shape
    return reshape_permute(permute(seq, (0, 2, 1)), (b, c, height, width))


# -- convolutions ----------------------------------------------------------

def _im2col3(x: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (B, C, H, W, 3, 3) zero-padded neighbourhoods."""
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    return sliding_window_view(padded, (3, 3), axis=(2, 3))


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """3x3 convolution, stride 1, zero padding 1 (cross-correlation)."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be (B, C, H, W), got {x.shape}")
    if kernel.ndim != 4 or kernel.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d kernel must be (Cout, Cin, 3, 3), "
                         f"got {kernel.shape}")
    if kernel.shape[1] != x.shape[1]:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, "
                         f"kernel expects {kernel.shape[1]}")
    if bias.shape != (kernel.shape[0],):
        raise ShapeError(f"conv2d bias must be ({kernel.shape[0]},), "
                         f"got {bias.shape}")

    cols = _im2col3(x.data)
    k = kernel.data
    out = np.einsum("bchwij,ocij->bohw", cols, k, optimize=True)
    out = out + bias.data[None, :, None, None]

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray, ...]:
        dk = np.einsum("bohw,bchwij->ocij", g, cols, optimize=True)
        flipped = np.transpose(k[:, :, ::-1, ::-1], (1, 0, 2, 3))
        dx = np.einsum("bohwij,coij->bchw", _im2col3(g), flipped,
                       optimize=True)
        return dx, dk, g.sum(axis=(0, 2, 3))

    return record("conv2d", (x, kernel, bias), out, grad_fn)


def conv1d_depthwise(seq: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Width-3 depthwise convolution along L of a (B, L, C) sequence."""
    if seq.ndim != 3:
        raise ShapeError(f"conv1d input must be (B, L, C), got {seq.shape}")
    channels = seq.shape[2]
    if kernel.shape != (channels, 3):
        raise ShapeError(f"conv1d kernel must be ({channels}, 3), "
                         f"got {kernel.shape}")
    if bias.shape != (channels,):
        raise ShapeError(f"conv1d bias must be ({channels},), "
                         f"got {bias.shape}")

    length = seq.shape[1]
    padded = np.pad(seq.data, ((0, 0), (1, 1), (0, 0)))
    k = kernel.data
    out = (padded[:, :-2] * k[:, 0] + padded[:, 1:-1] * k[:, 1]
           + padded[:, 2:] * k[:, 2] + bias.data)

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray, ...]:
        gp = np.zeros_like(padded)
        gp[:, :-2] += g * k[:, 0]
        gp[:, 1:-1] += g * k[:, 1]
        gp[:, 2:] += g * k[:, 2]
        dk = np.stack(
            [(g * padded[:, j:j + length]).sum(axis=(0, 1)) for j in range(3)],
            axis=1,
        )
        return gp[:, 1:-1], dk, g.sum(axis=(0, 1))

    return record("conv1d_depthwise", (seq, kernel, bias), out, grad_fn)


# -- normalisation and attention ------------------------------------------

def layer_norm(
    seq: Tensor,
    gamma: Tensor,
    beta: Tensor,
    eps: float = LAYER_NORM_EPS,
) -> Tensor:
    """Normalise over the last axis with population variance."""
    if eps <= 0:
        raise DomainError("layer_norm eps must be > 0")
    channels = seq.shape[-1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(f"layer_norm affine must be ({channels},), got "
                         f"{gamma.shape} and {beta.shape}")

    x = seq.data
    centered = x - x.mean(axis=-1, keepdims=True)
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data
    reduce_axes = tuple(range(x.ndim - 1))

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray, ...]:
        dxhat = g * gamma.data
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=reduce_axes), g.sum(axis=reduce_axes)

    return record("layer_norm", (seq, gamma, beta), out, grad_fn)


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    if not -t.ndim <= axis < t.ndim:
        raise ShapeError(f"axis {axis} out of range for {t.ndim} dims")
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record("softmax", (t,), y, grad_fn)


# -- resampling ------------------------------------------------------------

def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i holds the weights of output sample i (half-pixel centres)."""
    if n_in == n_out:
        return np.eye(n_in)
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    rows = np.arange(n_out)
    m = np.zeros((n_out, n_in))
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def bilinear_resize(img: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize the last two axes with edge-clamped bilinear sampling."""
    if img.ndim != 4:
        raise ShapeError(f"expected (B, C, H, W), got {img.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"target size must be >= 1, got {out_h}x{out_w}")
    in_h, in_w = img.shape[2], img.shape[3]
    if (in_h, in_w) == (out_h, out_w):
        return record("bilinear_resize", (img,), img.data.copy(),
                      lambda g: (g,))

    rh = _interp_matrix(in_h, out_h)
    rw = _interp_matrix(in_w, out_w)
    out = rh @ img.data @ rw.T
    return record("bilinear_resize", (img,), out,
                  lambda g: (rh.T @ g @ rw,))


# -- dense -----------------------------------------------------------------

def linear(seq: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``seq @ weight + bias`` over the last axis."""
    if weight.ndim != 2 or seq.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {seq.shape} does not match "
                         f"weight {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear bias must be ({weight.shape[1]},), "
                         f"got {bias.shape}")
    x, w = seq.data, weight.data
    out = x @ w + bias.data

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray, ...]:
        flat_x = x.reshape(-1, w.shape[0])
        flat_g = g.reshape(-1, w.shape[1])
        return g @ w.T, flat_x.T @ flat_g, flat_g.sum(axis=0)

    return record("linear", (seq, weight, bias), out, grad_fn)
