"""Chebyshev Type I band-pass bank and zero-phase forward-backward filtering.

Each sub-band r keeps stimulus harmonics of degree >= r: its pass band is
[r * base_freq - margin, upper_cut] Hz.  Filtering is order-2 Chebyshev I with
1 dB ripple, applied forward and backward over an odd-reflection extension of
3 * (n_coeff - 1) samples per end.  The two pass orders (forward-then-backward
and backward-then-forward) are averaged, which makes the operator exactly
symmetric under time reversal while keeping the squared magnitude response.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter, lfilter_zi


@dataclass(frozen=True)
class BandpassSpec:
    low_cut_hz: float
    high_cut_hz: float
    order: int = 2
    passband_ripple_db: float = 1.0


@dataclass(frozen=True)
class FilterCoefficients:
    numerator: np.ndarray
    denominator: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "numerator", np.asarray(self.numerator, dtype=np.float64))
        object.__setattr__(self, "denominator", np.asarray(self.denominator, dtype=np.float64))

    @property
    def n_coeff(self) -> int:
        return max(len(self.numerator), len(self.denominator))


@dataclass(frozen=True)
class FilterBankSpec:
    n_subbands: int
    base_freq_hz: float
    margin_hz: float = 2.0
    upper_cut_hz: float = 90.0

    def __post_init__(self):
        if self.n_subbands < 1:
            raise ValueError("n_subbands must be >= 1")

    def band_edges(self, r: int) -> tuple:
        """Pass-band edges of sub-band r (1-based)."""
        if not 1 <= r <= self.n_subbands:
            raise ValueError(f"sub-band index {r} outside 1..{self.n_subbands}")
        return (r * self.base_freq_hz - self.margin_hz, self.upper_cut_hz)


@dataclass(frozen=True)
class SubbandStack:
    """One trial's network input volume, channels x samples x sub-bands."""

    volume: np.ndarray

    def __post_init__(self):
        if self.volume.ndim != 3:
            raise ValueError("sub-band volume must be (channels, samples, bands)")
        if not np.all(np.isfinite(self.volume)):
            raise ValueError("sub-band volume contains non-finite values")


def design_cheby1_bandpass(spec: BandpassSpec, f_s: float) -> FilterCoefficients:
    """Digital Chebyshev I band-pass via the analog prototype and bilinear transform.

    The order-2 analog low-pass prototype is transformed low-pass -> band-pass,
    then discretized with frequency pre-warping.
    """
    nyq = f_s / 2.0
    if not (0.0 < spec.low_cut_hz < spec.high_cut_hz < nyq):
        raise ValueError(
            f"band ({spec.low_cut_hz}, {spec.high_cut_hz}) Hz invalid for f_s={f_s}")
    n = spec.order
    eps = np.sqrt(10.0 ** (spec.passband_ripple_db / 10.0) - 1.0)
    mu = np.arcsinh(1.0 / eps) / n
    theta = np.pi * (2 * np.arange(1, n + 1) - 1) / (2 * n)
    poles_lp = -np.sinh(mu) * np.sin(theta) + 1j * np.cosh(mu) * np.cos(theta)
    gain = np.real(np.prod(-poles_lp))
    if n % 2 == 0:
        gain /= np.sqrt(1.0 + eps * eps)

    # prewarped analog band edges
    fs2 = 2.0 * f_s
    w1 = fs2 * np.tan(np.pi * spec.low_cut_hz / f_s)
    w2 = fs2 * np.tan(np.pi * spec.high_cut_hz / f_s)
    w0 = np.sqrt(w1 * w2)
    bw = w2 - w1

    # low-pass -> band-pass: each prototype pole splits in two, n zeros at s=0
    p = poles_lp * bw / 2.0
    root = np.sqrt(p * p - w0 * w0)
    poles_bp = np.concatenate([p + root, p - root])
    zeros_bp = np.zeros(n)
    gain_bp = gain * bw ** n

    # bilinear transform; the degree deficit maps to zeros at z = -1
    zd = (fs2 + zeros_bp) / (fs2 - zeros_bp)
    pd = (fs2 + poles_bp) / (fs2 - poles_bp)
    kd = gain_bp * np.real(np.prod(fs2 - zeros_bp) / np.prod(fs2 - poles_bp))
    zd = np.append(zd, -np.ones(n))
    b = np.real(kd * np.poly(zd))
    a = np.real(np.poly(pd))
    if np.any(np.abs(np.roots(a)) >= 1.0):
        raise ValueError("designed filter is unstable")
    return FilterCoefficients(numerator=b, denominator=a)


def _odd_pad(x: np.ndarray, n: int) -> np.ndarray:
    left = 2.0 * x[..., :1] - x[..., n:0:-1]
    right = 2.0 * x[..., -1:] - x[..., -2:-n - 2:-1]
    return np.concatenate([left, x, right], axis=-1)


def _filtfilt_nd(coeffs: FilterCoefficients, x: np.ndarray) -> np.ndarray:
    """Zero-phase filtering along the last axis of a float64 array."""
    b, a = coeffs.numerator, coeffs.denominator
    pad = 3 * (coeffs.n_coeff - 1)
    if x.shape[-1] <= pad:
        raise ValueError(
            f"signal length {x.shape[-1]} must exceed padding length {pad}")
    zi = lfilter_zi(b, a)
    ext = _odd_pad(x, pad)

    def causal(v):
        y, _ = lfilter(b, a, v, zi=np.multiply.outer(v[..., 0], zi))
        return y

    def anticausal(v):
        return causal(v[..., ::-1])[..., ::-1]

    y = (anticausal(causal(ext)) + causal(anticausal(ext))) * 0.5
    return y[..., pad:ext.shape[-1] - pad]


def filtfilt(coeffs: FilterCoefficients, signal) -> np.ndarray:
    """Zero-phase filter a 1-D signal; output length equals input length."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("filtfilt expects a 1-D signal")
    return _filtfilt_nd(coeffs, x)


def make_subbands(epoch: np.ndarray, bank: FilterBankSpec, f_s: float) -> SubbandStack:
    """Filter one (channels, samples) epoch into the bank's sub-band volume."""
    x = np.asarray(epoch, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("epoch must be (channels, samples)")
    return SubbandStack(volume=_stack_volumes(x[np.newaxis], bank, f_s)[0])


def subband_stacks(epochs: np.ndarray, bank: FilterBankSpec, f_s: float) -> np.ndarray:
    """Vectorized :func:`make_subbands` over a (trials, channels, samples) array."""
    x = np.asarray(epochs, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError("epochs must be (trials, channels, samples)")
    return _stack_volumes(x, bank, f_s)


def _stack_volumes(x: np.ndarray, bank: FilterBankSpec, f_s: float) -> np.ndarray:
    slices = []
    for r in range(1, bank.n_subbands + 1):
        low, high = bank.band_edges(r)
        coeffs = design_cheby1_bandpass(BandpassSpec(low_cut_hz=low, high_cut_hz=high), f_s)
        slices.append(_filtfilt_nd(coeffs, x))
    return np.stack(slices, axis=-1)
