"""Central finite differences against tape gradients."""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Tuple

import numpy as np

from .errors import ContractError
from .tensor import Tape, Tensor, backward

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GradMismatch:
    name: str
    index: Tuple[int, ...]
    analytic: float
    numeric: float

    def __str__(self) -> str:
        return (f"{self.name}{list(self.index)}: analytic {self.analytic:.6g}"
                f" vs numeric {self.numeric:.6g}")


def analytic_grads(fn: Callable[[], Tensor],
                   tensors: Mapping[str, Tensor]) -> Dict[str, np.ndarray]:
    """Tape gradients of the scalar ``fn()`` for every tensor."""
    for t in tensors.values():
        if not t.requires_grad:
            raise ContractError("gradcheck tensors must require grad")
        t.zero_grad()
    with Tape() as tape:
        loss = fn()
    backward(loss, tape)
    grads: Dict[str, np.ndarray] = {}
    for name, t in tensors.items():
        assert t.grad is not None
        grads[name] = t.grad.copy()
    return grads


def numeric_grad(fn: Callable[[], Tensor], t: Tensor,
                 index: Tuple[int, ...], h: float) -> float:
    original = t.data[index]
    try:
        t.data[index] = original + h
        plus = fn().item()
        t.data[index] = original - h
        minus = fn().item()
    finally:
        t.data[index] = original
    return (plus - minus) / (2.0 * h)


def gradcheck(
    fn: Callable[[], Tensor],
    tensors: Mapping[str, Tensor],
    samples: int = 4,
    h: float = 1e-6,
    rtol: float = 1e-3,
    atol: float = 1e-8,
    seed: int = 0,
) -> List[GradMismatch]:
    """Compare analytic and numeric gradients on sampled coordinates.

    ``samples`` coordinates are drawn per tensor (all of them for small
    tensors). An empty list means every sampled coordinate agreed.
    """
    grads = analytic_grads(fn, tensors)
    rng = np.random.default_rng(seed)
    mismatches: List[GradMismatch] = []
    checked = 0
    for name, t in tensors.items():
        count = min(samples, t.size)
        for flat in rng.choice(t.size, size=count, replace=False):
            index = tuple(int(i) for i in np.unravel_index(flat, t.shape))
            a = float(grads[name][index])
            n = numeric_grad(fn, t, index, h)
            checked += 1
            if abs(a - n) > atol + rtol * max(abs(a), abs(n)):
                mismatches.append(GradMismatch(name, index, a, n))
    logger.info("gradcheck: %d coordinates, %d mismatches", checked,
                len(mismatches))
    return mismatches
