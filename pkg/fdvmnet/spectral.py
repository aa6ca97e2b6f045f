"""Amplitude/phase decomposition of images and its inverse.

All transforms act on the last two axes, so single images (C, H, W) and
batches (B, C, H, W) go through the same functions. ``numpy.fft`` handles
every length, including primes, which keeps arbitrary resolutions valid.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from . import tensor
from .errors import ContractError, DomainError, ShapeError
from .tensor import Tensor, record

_AXES = (-2, -1)


@dataclass
class SpectralPair:
    """Per-channel amplitude and phase maps of an image spectrum."""
    amplitude: Tensor
    phase: Tensor
    compressed: bool = False
    normalized_phase: bool = False

    def __post_init__(self) -> None:
        if self.amplitude.shape != self.phase.shape:
            raise ShapeError(
                f"amplitude {self.amplitude.shape} and phase "
                f"{self.phase.shape} must share dims")


def fft2(img: Tensor) -> Tuple[Tensor, Tensor]:
    """Unnormalised forward DFT; returns (real, imag)."""
    if img.ndim < 2:
        raise ShapeError(f"fft2 needs at least 2 dims, got {img.shape}")
    spectrum = np.fft.fft2(img.data, axes=_AXES)
    return Tensor(spectrum.real.copy()), Tensor(spectrum.imag.copy())


def ifft2(real: Tensor, imag: Tensor) -> Tuple[Tensor, Tensor]:
    """Inverse DFT scaled by 1/(H*W); returns (real, imag)."""
    if real.shape != imag.shape:
        raise ShapeError(f"real {real.shape} and imag {imag.shape} differ")
    signal = np.fft.ifft2(real.data + 1j * imag.data, axes=_AXES)
    return Tensor(signal.real.copy()), Tensor(signal.imag.copy())


def decompose(real: Tensor, imag: Tensor) -> SpectralPair:
    """Polar form of a spectrum, phase in (-pi, pi] with atan2(0, 0) = 0."""
    if real.shape != imag.shape:
        raise ShapeError(f"real {real.shape} and imag {imag.shape} differ")
    amplitude = np.hypot(real.data, imag.data)
    phase = np.arctan2(imag.data, real.data)
    # -0.0 imaginary parts land on -pi; fold them onto the closed end
    phase = np.where(phase <= -np.pi, np.pi, phase)
    phase = np.where(amplitude == 0.0, 0.0, phase)
    return SpectralPair(Tensor(amplitude), Tensor(phase))


def amp_compress(a: Tensor) -> Tensor:
    """ln(1 + a) for non-negative amplitudes."""
    if np.any(a.data < 0):
        raise DomainError("amplitude compression needs values >= 0")
    return tensor.log1p(a)


def amp_expand(a: Tensor) -> Tensor:
    """exp(a) - 1, the inverse of :func:`amp_compress`."""
    return tensor.expm1(a)


def phase_normalize(p: Tensor) -> Tensor:
    return tensor.scale(p, 1.0 / np.pi)


def phase_denormalize(q: Tensor) -> Tensor:
    return tensor.scale(q, np.pi)


def prepare(pair: SpectralPair) -> SpectralPair:
    """Compress amplitude and normalise phase, recording both flags."""
    amplitude = pair.amplitude
    phase = pair.phase
    if not pair.compressed:
        amplitude = amp_compress(amplitude)
    if not pair.normalized_phase:
        phase = phase_normalize(phase)
    return SpectralPair(amplitude, phase, compressed=True,
                        normalized_phase=True)


def restore(pair: SpectralPair) -> SpectralPair:
    """Undo :func:`prepare`; differentiable through the tape."""
    amplitude = amp_expand(pair.amplitude) if pair.compressed \
        else pair.amplitude
    phase = phase_denormalize(pair.phase) if pair.normalized_phase \
        else pair.phase
    return SpectralPair(amplitude, phase)


def recompose(pair: SpectralPair) -> Tensor:
    """Real part of the inverse DFT of amplitude * exp(i * phase).

    The pair must hold raw values (see :func:`restore`). Network outputs
    need not be conjugate symmetric; taking the real part is the declared
    projection back to images.
    """
    if pair.compressed or pair.normalized_phase:
        raise ContractError("recompose needs a restored (raw) pair")
    amp, pha = pair.amplitude, pair.phase
    cos_p = np.cos(pha.data)
    sin_p = np.sin(pha.data)
    spectrum = amp.data * cos_p + 1j * (amp.data * sin_p)
    out = np.fft.ifft2(spectrum, axes=_AXES).real.copy()

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        back = np.fft.ifft2(g, axes=_AXES)
        d_re, d_im = back.real, -back.imag
        d_amp = d_re * cos_p + d_im * sin_p
        d_pha = amp.data * (d_im * cos_p - d_re * sin_p)
        return d_amp, d_pha

    return record("recompose", (amp, pha), out, grad_fn)


def analyze(img: Tensor) -> SpectralPair:
    """fft2 + decompose + prepare: the input side of both network paths."""
    return prepare(decompose(*fft2(img)))


def synthesize(pair: SpectralPair) -> Tensor:
    """restore + recompose: the output side of the network."""
    return recompose(restore(pair))
