"""Band-limited noise-reduction metric."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal as sps

from .dsp import Waveform, design_butterworth_bandpass


@dataclass(frozen=True)
class EvalProtocol:
    band_low_hz: float = 100.0
    band_high_hz: float = 1000.0
    butterworth_order: int = 4
    chunk_s: float = 0.5
    context_s: float = 2.0
    application_delay_s: float = 0.2
    warmup_s: float = 0.2  # filter settling discarded before each chunk

    def __post_init__(self):
        if not 0 < self.band_low_hz < self.band_high_hz:
            raise ValueError("band edges must satisfy 0 < low < high")
        if self.chunk_s <= 0 or self.context_s <= 0 or self.application_delay_s < 0:
            raise ValueError("chunk and context must be positive, delay non-negative")

    def validate_rate(self, fs: int):
        if self.band_high_hz >= fs / 2:
            raise ValueError(f"band edge {self.band_high_hz} Hz is above Nyquist for {fs} Hz")


@lru_cache(maxsize=16)
def _band_sos(order: int, low: float, high: float, fs: int) -> np.ndarray:
    return design_butterworth_bandpass(order, low, high, fs).as_scipy()


def bandpass(x: np.ndarray, protocol: EvalProtocol, fs: int) -> np.ndarray:
    protocol.validate_rate(fs)
    sos = _band_sos(protocol.butterworth_order, protocol.band_low_hz, protocol.band_high_hz, fs)
    return sps.sosfilt(sos, np.ascontiguousarray(x, dtype=np.float64), axis=-1)


def reduction_from_filtered(d_f: np.ndarray, e_f: np.ndarray) -> float:
    """``10 log10(sum d^2 / sum e^2)`` on already band-passed signals."""
    pd = float(np.sum(d_f**2))
    pe = float(np.sum(e_f**2))
    if pe == 0.0:
        return math.inf
    if pd == 0.0:
        return -math.inf
    return 10.0 * math.log10(pd / pe)


def noise_reduction_db(d: Waveform, e: Waveform, protocol: EvalProtocol = EvalProtocol(),
                       skip_samples: int = 0) -> float:
    """Power ratio in dB between the band-passed ear signal and residual.

    The Butterworth bandpass is applied causally to both signals; the first
    ``skip_samples`` outputs are dropped before summing. A silent residual
    returns ``+inf``.
    """
    if len(d) != len(e) or d.sample_rate_hz != e.sample_rate_hz:
        raise ValueError("d and e must have equal length and sample rate")
    fs = d.sample_rate_hz
    d_f = bandpass(d.samples, protocol, fs)[skip_samples:]
    e_f = bandpass(e.samples, protocol, fs)[skip_samples:]
    return reduction_from_filtered(d_f, e_f)
