"""Foundational numeric kernels shared by every other module.

All arithmetic is float64. Signals are carried by small immutable containers
(:class:`Waveform`, :class:`MultiChannelWaveform`, :class:`FirFilter`,
:class:`FirFilterBank`, :class:`SosChain`) that validate their invariants on
construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import signal as sps

DEFAULT_FS = 22050


class DspError(ValueError):
    """Raised when a DSP precondition is violated."""


def _as_float_array(x, ndim: int, name: str) -> np.ndarray:
    arr = np.array(x, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise DspError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DspError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


def _check_rate(fs) -> int:
    if int(fs) != fs or fs <= 0:
        raise DspError(f"sample rate must be a positive integer, got {fs!r}")
    return int(fs)


@dataclass(frozen=True)
class Waveform:
    """Single-channel sampled signal."""

    samples: np.ndarray
    sample_rate_hz: int = DEFAULT_FS

    def __post_init__(self):
        object.__setattr__(self, "samples", _as_float_array(self.samples, 1, "samples"))
        object.__setattr__(self, "sample_rate_hz", _check_rate(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples**2))) if len(self) else 0.0


@dataclass(frozen=True)
class MultiChannelWaveform:
    """Multichannel signal stored as an array of shape ``(channels, samples)``."""

    samples: np.ndarray
    sample_rate_hz: int = DEFAULT_FS

    def __post_init__(self):
        object.__setattr__(self, "samples", _as_float_array(self.samples, 2, "samples"))
        object.__setattr__(self, "sample_rate_hz", _check_rate(self.sample_rate_hz))

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    def __len__(self) -> int:
        return self.samples.shape[1]

    def channel(self, m: int) -> Waveform:
        return Waveform(self.samples[m], self.sample_rate_hz)

    def select(self, channels: Sequence[int]) -> "MultiChannelWaveform":
        return MultiChannelWaveform(self.samples[list(channels)], self.sample_rate_hz)

    @classmethod
    def from_channels(cls, channels: Sequence[Waveform]) -> "MultiChannelWaveform":
        if not channels:
            raise DspError("at least one channel required")
        rates = {c.sample_rate_hz for c in channels}
        lengths = {len(c) for c in channels}
        if len(rates) != 1 or len(lengths) != 1:
            raise DspError("channels must share sample rate and length")
        return cls(np.stack([c.samples for c in channels]), rates.pop())


@dataclass(frozen=True)
class FirFilter:
    """Finite impulse response ``taps[0..L-1]``."""

    taps: np.ndarray
    sample_rate_hz: int = DEFAULT_FS

    def __post_init__(self):
        object.__setattr__(self, "taps", _as_float_array(self.taps, 1, "taps"))
        object.__setattr__(self, "sample_rate_hz", _check_rate(self.sample_rate_hz))
        if self.taps.shape[0] < 1:
            raise DspError("FIR filter needs at least one tap")

    def __len__(self) -> int:
        return self.taps.shape[0]

    def energy(self) -> float:
        return float(np.sum(self.taps**2))

    def resized(self, length: int) -> "FirFilter":
        """Truncate or zero-pad to ``length`` taps."""
        out = np.zeros(length)
        n = min(length, len(self))
        out[:n] = self.taps[:n]
        return FirFilter(out, self.sample_rate_hz)

    def delayed(self, samples: int) -> "FirFilter":
        """Prepend ``samples`` zeros (integer delay, length grows)."""
        if samples < 0:
            raise DspError("delay must be non-negative")
        return FirFilter(np.concatenate([np.zeros(samples), self.taps]), self.sample_rate_hz)

    @classmethod
    def impulse(cls, length: int, at: int = 0, fs: int = DEFAULT_FS) -> "FirFilter":
        taps = np.zeros(length)
        taps[at] = 1.0
        return cls(taps, fs)


@dataclass(frozen=True)
class FirFilterBank:
    """Ordered collection of equal-rate FIR filters (lengths may differ)."""

    filters: tuple = field(default_factory=tuple)

    def __post_init__(self):
        filters = tuple(self.filters)
        if not filters:
            raise DspError("filter bank cannot be empty")
        if len({f.sample_rate_hz for f in filters}) != 1:
            raise DspError("filters in a bank must share a sample rate")
        object.__setattr__(self, "filters", filters)

    def __len__(self) -> int:
        return len(self.filters)

    def __getitem__(self, i) -> FirFilter:
        return self.filters[i]

    def __iter__(self):
        return iter(self.filters)

    @property
    def sample_rate_hz(self) -> int:
        return self.filters[0].sample_rate_hz

    def as_array(self, length: int | None = None) -> np.ndarray:
        """Stack taps into ``(M, length)``, zero-padding or truncating."""
        n = length if length is not None else max(len(f) for f in self.filters)
        return np.stack([f.resized(n).taps for f in self.filters])

    @classmethod
    def from_array(cls, taps: np.ndarray, fs: int = DEFAULT_FS) -> "FirFilterBank":
        return cls(tuple(FirFilter(row, fs) for row in np.atleast_2d(taps)))


@dataclass(frozen=True)
class SosChain:
    """Cascade of biquads; each row is ``(b0, b1, b2, a1, a2)`` with ``a0 = 1``."""

    sections: np.ndarray

    def __post_init__(self):
        sec = np.array(self.sections, dtype=np.float64)
        if sec.ndim != 2 or sec.shape[1] not in (5, 6):
            raise DspError("sections must have shape (K, 5) or (K, 6)")
        if sec.shape[1] == 6:
            if not np.allclose(sec[:, 3], 1.0):
                raise DspError("a0 must be 1 in every section")
            sec = sec[:, [0, 1, 2, 4, 5]]
        if not np.all(np.isfinite(sec)):
            raise DspError("sections contain non-finite values")
        sec.setflags(write=False)
        object.__setattr__(self, "sections", sec)
        if self.pole_radii().size and np.max(self.pole_radii()) >= 1.0:
            raise DspError("unstable section: pole on or outside the unit circle")

    def pole_radii(self) -> np.ndarray:
        radii = [np.abs(np.roots([1.0, a1, a2])) for a1, a2 in self.sections[:, 3:]]
        return np.concatenate(radii) if radii else np.zeros(0)

    def as_scipy(self) -> np.ndarray:
        s = self.sections
        return np.ascontiguousarray(np.column_stack([s[:, :3], np.ones(len(s)), s[:, 3:]]))

    def frequency_response(self, freqs_hz, fs: int) -> np.ndarray:
        """Evaluate H(e^{jw}) directly from the section polynomials."""
        z = np.exp(1j * 2 * np.pi * np.asarray(freqs_hz, dtype=float) / fs)
        h = np.ones_like(z)
        for b0, b1, b2, a1, a2 in self.sections:
            h *= (b0 + b1 / z + b2 / z**2) / (1 + a1 / z + a2 / z**2)
        return h


def _check_same_rate(a: int, b: int):
    if a != b:
        raise DspError(f"sample-rate mismatch: {a} Hz vs {b} Hz")


def convolve_causal(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Causal convolution truncated to ``len(x)`` along the last axis."""
    n = x.shape[-1]
    if min(n, h.shape[-1]) <= 64 or n * h.shape[-1] < 2_000_000:
        if x.ndim == 1:
            return np.convolve(x, h)[:n]
        return np.stack([np.convolve(row, h)[:n] for row in x])
    return sps.oaconvolve(x, np.broadcast_to(h, x.shape[:-1] + h.shape[-1:]), axes=-1)[..., :n]


def fir_convolve(x: Waveform, h: FirFilter) -> Waveform:
    """Causal convolution ``y[n] = sum_k h[k] x[n-k]`` with zero initial state.

    The output has the same length as ``x``.
    """
    _check_same_rate(x.sample_rate_hz, h.sample_rate_hz)
    return Waveform(convolve_causal(x.samples, h.taps), x.sample_rate_hz)


def design_butterworth_bandpass(order: int, low_hz: float, high_hz: float, fs: int) -> SosChain:
    """Digital Butterworth bandpass via the bilinear transform.

    ``order`` is the lowpass prototype order (so ``order=4`` gives four poles
    per band edge); band edges are pre-warped by scipy.
    """
    if order < 2 or order % 2:
        raise DspError(f"order must be a positive even integer, got {order}")
    if not 0 < low_hz < high_hz < fs / 2:
        raise DspError(f"band edges must satisfy 0 < {low_hz} < {high_hz} < {fs / 2}")
    sos = sps.butter(order, [low_hz, high_hz], btype="bandpass", fs=fs, output="sos")
    return SosChain(sos)


def sos_filter(x: Waveform, chain: SosChain) -> Waveform:
    """Apply the cascade in order with zero initial state."""
    return Waveform(sps.sosfilt(chain.as_scipy(), x.samples), x.sample_rate_hz)


def _check_pow2(n: int):
    if n < 1 or n & (n - 1):
        raise DspError(f"FFT size must be a power of two, got {n}")


def rfft(block, n: int) -> np.ndarray:
    _check_pow2(n)
    return np.fft.rfft(np.asarray(block, dtype=np.float64), n)


def irfft(spectrum, n: int) -> np.ndarray:
    _check_pow2(n)
    return np.fft.irfft(spectrum, n)


def fractional_delay_fir(
    delay_samples: float, num_taps: int, fs: int = DEFAULT_FS, max_half_width: float = 32.0
) -> FirFilter:
    """Hann-windowed sinc delay normalized to unit DC gain.

    The window half-width shrinks near the ends of the filter so that the
    support stays inside ``[0, num_taps)``, which keeps the response causal.
    Integer delays come out as exact unit impulses.
    """
    if num_taps < 1:
        raise DspError("num_taps must be positive")
    if not 0 <= delay_samples <= num_taps - 1:
        raise DspError(f"delay {delay_samples} outside representable range [0, {num_taps - 1}]")
    taps = np.zeros(num_taps)
    hw = min(max_half_width, delay_samples, num_taps - 1 - delay_samples)
    if hw < 1.0 or float(delay_samples).is_integer():
        if float(delay_samples).is_integer():
            taps[int(delay_samples)] = 1.0
            return FirFilter(taps, fs)
        # less than one sample of room on one side: linear interpolation
        k = int(np.floor(delay_samples))
        frac = delay_samples - k
        taps[k] = 1.0 - frac
        taps[k + 1] = frac
        return FirFilter(taps, fs)
    lo = int(np.ceil(delay_samples - hw))
    hi = int(np.floor(delay_samples + hw))
    k = np.arange(lo, hi + 1)
    t = k - delay_samples
    win = 0.5 * (1.0 + np.cos(np.pi * t / hw))
    h = np.sinc(t) * win
    taps[lo : hi + 1] = h / h.sum()
    return FirFilter(taps, fs)


def _shape_white(white: np.ndarray, gain: np.ndarray) -> np.ndarray:
    spec = np.fft.rfft(white)
    return np.fft.irfft(spec * gain, len(white))


def seeded_noise(
    kind: str | tuple,
    duration_s: float,
    fs: int = DEFAULT_FS,
    seed: int = 0,
) -> Waveform:
    """Deterministic unit-RMS noise.

    ``kind`` is ``"white"``, ``"pink"`` or ``("bandlimited", lo_hz, hi_hz)``
    (the string form ``"bandlimited:lo:hi"`` is also accepted). Pink and
    bandlimited noise are obtained by spectrally shaping seeded white noise.
    """
    if duration_s <= 0:
        raise DspError("duration must be positive")
    n = int(round(duration_s * fs))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    name, params = parse_noise_kind(kind)
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    if name == "pink":
        gain = np.zeros_like(freqs)
        gain[1:] = 1.0 / np.sqrt(freqs[1:])
        x = _shape_white(x, gain)
    elif name == "bandlimited":
        lo, hi = params
        x = _shape_white(x, ((freqs >= lo) & (freqs <= hi)).astype(float))
    rms = np.sqrt(np.mean(x**2))
    if rms > 0:
        x = x / rms
    return Waveform(x, fs)


def parse_noise_kind(kind) -> tuple[str, tuple]:
    if isinstance(kind, str) and kind.startswith("bandlimited"):
        parts = kind.split(":")
        if len(parts) != 3:
            raise DspError(f"bandlimited noise needs 'bandlimited:lo:hi', got {kind!r}")
        kind = ("bandlimited", float(parts[1]), float(parts[2]))
    if isinstance(kind, (tuple, list)):
        if len(kind) != 3 or kind[0] != "bandlimited":
            raise DspError(f"unknown noise kind {kind!r}")
        lo, hi = float(kind[1]), float(kind[2])
        if not 0 <= lo < hi:
            raise DspError(f"bad band ({lo}, {hi})")
        return "bandlimited", (lo, hi)
    if kind in ("white", "pink"):
        return kind, ()
    raise DspError(f"unknown noise kind {kind!r}")


def nmse_db(estimate: np.ndarray, reference: np.ndarray) -> float:
    """Normalized mean-square error in dB after zero-padding to a common length."""
    n = max(len(estimate), len(reference))
    a = np.zeros(n)
    b = np.zeros(n)
    a[: len(estimate)] = estimate
    b[: len(reference)] = reference
    return float(10 * np.log10(np.sum((a - b) ** 2) / np.sum(b**2)))
