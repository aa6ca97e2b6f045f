"""Fast built-in oracle suite behind ``fdvm check``."""

import logging
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import spectral, tensor
from .gradcheck import gradcheck
from .model import ModelConfig, build_model, fdvm_forward
from .ssm import SsmParams, init_ssm, scan_discrete, scan_reference
from .ssm import selective_scan
from .tensor import Tensor

logger = logging.getLogger(__name__)

FAULTS = ("ssm",)

ScanFn = Callable[[Tensor, SsmParams], Tensor]


@dataclass(frozen=True)
class CheckResult:
    module: str
    title: str
    passed: bool
    seconds: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{status} {self.module}: {self.title} ({self.seconds:.3f} s)"
        if self.detail:
            text += f" - {self.detail}"
        return text


def _corrupted_scan(u: Tensor, params: SsmParams) -> Tensor:
    out = selective_scan(u, params).data.copy()
    out[:, -1] += 1e-3
    return Tensor(out)


def _check_fft_round_trip(rng: np.random.Generator) -> Optional[str]:
    for h, w in ((4, 4), (5, 7), (17, 13)):
        img = Tensor(rng.random((3, h, w)))
        back = spectral.synthesize(spectral.analyze(img))
        err = float(np.abs(back.data - img.data).max())
        if err >= 1e-9:
            return f"{h}x{w} round trip error {err:.3g}"
    return None


def _check_scan(rng: np.random.Generator, scan: ScanFn) -> Optional[str]:
    for _ in range(5):
        b, length = int(rng.integers(1, 3)), int(rng.integers(1, 33))
        c, n = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        params = init_ssm(c, n, rng)
        u = Tensor(rng.normal(size=(b, length, c)))
        fast, ref = scan(u, params), scan_reference(u, params)
        if not np.array_equal(fast.data, ref.data):
            diff = float(np.abs(fast.data - ref.data).max())
            return (f"scan differs from reference on B={b} L={length} "
                    f"C={c} N={n} (max diff {diff:.3g})")

    ones = np.ones((1, 3, 1, 1))
    y = scan_discrete(0.5 * ones, ones, np.ones((1, 3, 1)), np.zeros(1),
                      np.ones((1, 3, 1)))
    if y[0, :, 0].tolist() != [1.0, 1.5, 1.75]:
        return f"hand-unrolled scan gave {y[0, :, 0].tolist()}"
    return None


def _check_primitive_grads(rng: np.random.Generator) -> Optional[str]:
    x = Tensor(rng.normal(size=(2, 3, 5, 6)), requires_grad=True)
    k = Tensor(rng.normal(size=(4, 3, 3, 3)), requires_grad=True)
    bias = Tensor(rng.normal(size=4), requires_grad=True)
    gamma = Tensor(rng.normal(size=4), requires_grad=True)
    beta = Tensor(rng.normal(size=4), requires_grad=True)
    weights = Tensor(rng.normal(size=(2, 4, 4, 4)))

    def loss() -> Tensor:
        y = tensor.conv2d(x, k, bias)
        y = tensor.bilinear_resize(y, 4, 4)
        seq = tensor.layer_norm(tensor.to_sequence(y), gamma, beta)
        seq = tensor.softmax(seq, axis=-1)
        y = tensor.to_image(seq, 4, 4)
        return tensor.sum_all(tensor.hadamard(y, weights))

    bad = gradcheck(loss, {"x": x, "kernel": k, "bias": bias,
                           "gamma": gamma, "beta": beta}, samples=3)
    return "; ".join(str(m) for m in bad[:3]) or None


def _check_scan_grads(rng: np.random.Generator) -> Optional[str]:
    params = init_ssm(3, 2, rng)
    u = Tensor(rng.normal(size=(1, 6, 3)), requires_grad=True)
    weights = Tensor(rng.normal(size=(1, 6, 3)))

    def loss() -> Tensor:
        return tensor.sum_all(
            tensor.hadamard(selective_scan(u, params), weights))

    table = {"u": u, **params.named()}
    bad = gradcheck(loss, table, samples=2)
    return "; ".join(str(m) for m in bad[:3]) or None


def _check_identity_at_init(rng: np.random.Generator) -> Optional[str]:
    cfg = ModelConfig(channels=4, blocks_per_path=2, ssm_state_dim=2,
                      ssm_fixed_hw=8)
    weights = build_model(cfg, seed=0)
    img = Tensor(rng.random((1, 3, 9, 11)))
    err = float(np.abs(fdvm_forward(img, weights).data - img.data).max())
    if err >= 1e-6:
        return f"fresh model changes its input by {err:.3g}"
    return None


def _check_model_grads(rng: np.random.Generator) -> Optional[str]:
    cfg = ModelConfig(channels=4, blocks_per_path=2, ssm_state_dim=2,
                      ssm_fixed_hw=8)
    weights = build_model(cfg, seed=0)
    params = weights.named_parameters()
    for t in params.values():
        t.data = t.data + rng.normal(0.0, 0.1, t.shape)
    img = Tensor(rng.random((1, 3, 8, 8)))
    target = Tensor(rng.normal(size=(1, 3, 8, 8)))

    def loss() -> Tensor:
        return tensor.sum_all(
            tensor.hadamard(fdvm_forward(img, weights), target))

    bad = gradcheck(loss, params, samples=1, atol=1e-6)
    return "; ".join(str(m) for m in bad[:3]) or None


def run_selfcheck(inject_fault: Optional[str] = None,
                  seed: int = 0) -> List[CheckResult]:
    """Run every check; ``inject_fault='ssm'`` corrupts the fast scan."""
    scan: ScanFn = _corrupted_scan if inject_fault == "ssm" \
        else selective_scan
    checks: List[Tuple[str, str, Callable[[np.random.Generator],
                                          Optional[str]]]] = [
        ("spectral", "FFT round trip", _check_fft_round_trip),
        ("ssm", "scan vs reference", lambda r: _check_scan(r, scan)),
        ("ssm", "scan gradients", _check_scan_grads),
        ("tensor", "primitive gradients", _check_primitive_grads),
        ("model", "identity at init", _check_identity_at_init),
        ("model", "end-to-end gradients", _check_model_grads),
    ]
    results: List[CheckResult] = []
    for module, title, check in checks:
        rng = np.random.default_rng(seed)
        start = time.perf_counter()
        try:
            detail = check(rng)
        except Exception as e:  # a crash is a failure of that check
            detail = f"{type(e).__name__}: {e}"
        elapsed = time.perf_counter() - start
        result = CheckResult(module, title, detail is None, elapsed,
                             detail or "")
        logger.info(result.line())
        results.append(result)
    return results
