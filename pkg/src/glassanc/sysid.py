"""Exponential sine sweep measurement of the speaker paths.

The sweep ``x(t) = sin(K (exp(t/T_r) - 1))`` spends more time at low
frequencies, so its spectrum falls at -3 dB/octave. The matched inverse is
the time-reversed sweep with the opposite +6 dB/octave tilt applied in
power; here it is built directly in the frequency domain as
``conj(X) / (|X|^2 + eps)`` times a pure delay, which is the time-reversed
sweep whitened bin by bin. ``sweep * inverse`` is then a band-limited
impulse at lag ``len(sweep) - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .dsp import DEFAULT_FS, FirFilter, FirFilterBank, SosChain, Waveform

SECONDARY_TAPS = 1024
FEEDBACK_TAPS = 256
PRE_PEAK_GUARD = 16
MIN_PEAK_TO_MEDIAN_DB = 20.0


class MeasurementError(RuntimeError):
    """The deconvolved response shows no usable linear peak."""


@dataclass(frozen=True)
class SweepPair:
    sweep: Waveform
    inverse: Waveform

    @property
    def zero_lag(self) -> int:
        """Index of lag 0 in ``recorded * inverse``."""
        return len(self.sweep) - 1


def _next_pow2(n: int) -> int:
    return 1 << (int(n) - 1).bit_length()


def exact_inverse(excitation: np.ndarray, regularization: float = 1e-10) -> np.ndarray:
    """Regularized inverse of an excitation, delayed by ``len(excitation) - 1``.

    ``regularization`` is relative to the peak of ``|X|^2``.
    """
    x = np.asarray(excitation, dtype=np.float64)
    n = len(x)
    nfft = _next_pow2(2 * n)
    X = np.fft.rfft(x, nfft)
    p = np.abs(X) ** 2
    eps = regularization * p.max()
    # conj(X) is the reversed sweep advanced by n-1 samples; delay it back
    k = np.arange(len(X))
    H = np.conj(X) * np.exp(-2j * np.pi * k * (n - 1) / nfft) / (p + eps)
    return np.fft.irfft(H, nfft)[: 2 * n - 1]


def generate_ess(f1_hz: float = 20.0, f2_hz: float = 11025.0, duration_s: float = 20.0,
                 fs: int = DEFAULT_FS, fade_s: float = 0.0) -> SweepPair:
    """Exponential sweep from ``f1_hz`` to ``f2_hz`` and its matched inverse.

    An optional raised-cosine fade of ``fade_s`` seconds is applied to both
    ends of the sweep before the inverse is computed.
    """
    if not 0 < f1_hz < f2_hz <= fs / 2:
        raise ValueError(f"need 0 < f1 < f2 <= fs/2, got {f1_hz}, {f2_hz} at {fs} Hz")
    if duration_s <= 0:
        raise ValueError("sweep duration must be positive")
    n = int(round(duration_s * fs))
    t = np.arange(n) / fs
    w1, w2 = 2 * np.pi * f1_hz, 2 * np.pi * f2_hz
    rate = duration_s / np.log(w2 / w1)
    x = np.sin(w1 * rate * (np.exp(t / rate) - 1.0))
    nf = int(round(fade_s * fs))
    if nf > 0:
        ramp = 0.5 * (1 - np.cos(np.pi * np.arange(nf) / nf))
        x[:nf] *= ramp
        x[-nf:] *= ramp[::-1]
    return SweepPair(Waveform(x, fs), Waveform(exact_inverse(x), fs))


def first_order_shelf(corner_hz: float, gain_db: float, fs: int) -> SosChain:
    """First-order shelf, unity at DC and ``gain_db`` well above ``corner_hz``.

    Hook for compensating a speaker response; simulated speakers are flat
    so the measurement functions bypass it unless given one.
    """
    g = 10 ** (gain_db / 20)
    k = np.tan(np.pi * corner_hz / fs)
    # bilinear transform of (s/wc * g + 1) / (s/wc + 1)
    b0, b1 = (g + k), (k - g)
    a0, a1 = (1 + k), (k - 1)
    return SosChain(np.array([[b0 / a0, b1 / a0, 0.0, a1 / a0, 0.0]]))


def _convolve_full(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    return sps.fftconvolve(x, h)


def deconvolve_ir(recorded: Waveform, pair: SweepPair, out_taps: int,
                  guard: int = PRE_PEAK_GUARD) -> FirFilter:
    """Recover ``out_taps`` of the linear impulse response from a recording.

    The linear response starts at the inverse's zero lag; harmonic
    distortion products land before it. The peak is searched from
    ``guard`` samples ahead of zero lag, so fractional-delay precursors
    stay visible to the check, and the taps are returned aligned so that
    tap 0 is lag 0 (a measured ``delta[k]`` comes back as ``delta[k]``).
    """
    if recorded.sample_rate_hz != pair.sweep.sample_rate_hz:
        raise ValueError("recording and sweep sample rates differ")
    if len(recorded) < len(pair.sweep):
        raise ValueError("recording is shorter than the sweep")
    if out_taps < 1:
        raise ValueError("out_taps must be positive")
    ir = _convolve_full(recorded.samples, pair.inverse.samples)
    z = pair.zero_lag
    lo = max(0, z - guard)
    window = np.abs(ir[lo : z + out_taps])
    peak = float(window.max()) if window.size else 0.0
    # noise floor from the region around zero lag where recording and inverse
    # fully overlap; the partial-overlap ends would drag the median down
    half = max(len(pair.sweep) // 4, 4 * (guard + out_taps))
    around = np.abs(ir[max(0, z - half) : z + half])
    outside = np.concatenate([around[: lo - max(0, z - half)], around[z + out_taps - max(0, z - half) :]])
    floor = float(np.median(outside if outside.size else np.abs(ir)))
    if peak == 0.0 or (floor > 0 and 20 * np.log10(peak / floor) < MIN_PEAK_TO_MEDIAN_DB):
        raise MeasurementError("no linear-response peak above the noise floor")
    taps = ir[z : z + out_taps]
    if len(taps) < out_taps:
        taps = np.pad(taps, (0, out_taps - len(taps)))
    return FirFilter(taps, recorded.sample_rate_hz)


def _measure(paths: np.ndarray, pair: SweepPair, out_taps: int, num_sweeps: int,
             noise_level_db: float | None, seed: int, excitation: SosChain | None) -> list[FirFilter]:
    """Play the sweep through each row of ``paths`` and deconvolve the average."""
    fs = pair.sweep.sample_rate_hz
    x = pair.sweep.samples
    meas_pair = pair
    if excitation is not None:
        x = sps.sosfilt(excitation.as_scipy(), x)
        meas_pair = SweepPair(Waveform(x, fs), Waveform(exact_inverse(x), fs))
    tail = paths.shape[1] - 1
    rng = np.random.default_rng(seed)
    out = []
    for h in paths:
        clean = _convolve_full(x, h)[: len(x) + tail]
        power = float(np.mean(clean**2))
        acc = np.zeros_like(clean)
        for _ in range(num_sweeps):
            rec = clean.copy()
            if noise_level_db is not None and power > 0:
                rec += rng.standard_normal(len(rec)) * np.sqrt(power * 10 ** (noise_level_db / 10))
            acc += rec
        out.append(deconvolve_ir(Waveform(acc / num_sweeps, fs), meas_pair, out_taps))
    return out


def estimate_secondary_path(scene, pair: SweepPair | None = None, num_taps: int = SECONDARY_TAPS,
                            num_sweeps: int = 2, noise_level_db: float | None = None, seed: int = 0,
                            latency_samples: int = 0,
                            excitation: SosChain | None = None) -> FirFilter:
    """Measure the speaker-to-ear path of ``scene`` with averaged sweeps.

    ``noise_level_db`` adds seeded white noise at that level relative to the
    recorded signal to every recording. ``latency_samples`` models a
    playback chain delay that the measurement then includes.
    """
    fs = scene.sample_rate_hz
    pair = pair or generate_ess(fs=fs)
    if num_sweeps < 1:
        raise ValueError("need at least one sweep")
    s = scene.true_secondary.delayed(latency_samples) if latency_samples else scene.true_secondary
    return _measure(s.taps[None, :], pair, num_taps, num_sweeps, noise_level_db, seed, excitation)[0]


def estimate_feedback_paths(scene, pair: SweepPair | None = None, num_taps: int = FEEDBACK_TAPS,
                            num_sweeps: int = 2, noise_level_db: float | None = None, seed: int = 0,
                            excitation: SosChain | None = None) -> FirFilterBank:
    """Measure the speaker-to-mic paths, one filter per mic."""
    fs = scene.sample_rate_hz
    pair = pair or generate_ess(fs=fs)
    paths = scene.true_feedback.as_array()
    if not np.any(paths):
        raise MeasurementError("feedback coupling is zero; nothing to measure")
    filters = _measure(paths, pair, num_taps, num_sweeps, noise_level_db, seed, excitation)
    return FirFilterBank(tuple(filters))
