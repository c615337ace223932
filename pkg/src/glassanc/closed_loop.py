"""Closed-loop simulation: the engine driving the scene's speaker.

The speaker emits the engine output ``injected_latency_samples`` late.
Sound reaches the ear through the true secondary path and leaks back into
every mic through the true feedback paths, so the engine's next input
already contains its own output. Filter estimates are computed on the
trailing context of the engine's clean references every update period and
take effect after the application delay.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dsp import FirFilter, FirFilterBank, MultiChannelWaveform, Waveform, convolve_causal
from .engine import EngineConfig, HybridEngine, UpdateSchedule
from .filters import AncFilterSet
from .metrics import EvalProtocol, bandpass, reduction_from_filtered

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LoopOptions:
    oracle_ear: bool = True
    afc_enabled: bool = True
    s_hat: FirFilter | None = None  # defaults to the true path including latency
    g_hat: FirFilterBank | None = None  # defaults to the exact effective feedback paths
    drive_limit: float | None = None  # None picks a bound from the scene; 0 disables


@dataclass
class LoopResult:
    residual: Waveform
    drive: Waveform
    clean_refs: MultiChannelWaveform
    events: list = field(default_factory=list)
    chunks: list = field(default_factory=list)

    def log_records(self) -> list[dict]:
        """Time-ordered JSON-ready records of updates and chunk reductions."""
        recs = [dict(e) for e in self.events] + [dict(c) for c in self.chunks]
        return sorted(recs, key=lambda r: r["t_s"])


def effective_secondary(scene, latency: int) -> FirFilter:
    """Drive-to-ear response including the injected output delay."""
    return scene.true_secondary.delayed(latency)


def effective_feedback(scene, latency: int) -> FirFilterBank:
    """Feedback paths as seen from ``out[n-1]``: the speaker plays ``out[n-latency]``."""
    fs = scene.sample_rate_hz
    taps = scene.true_feedback.as_array()
    if latency > 1:
        taps = np.pad(taps, ((0, 0), (latency - 1, 0)))
    return FirFilterBank(tuple(FirFilter(t, fs) for t in taps))


def _default_drive_limit(scene) -> float:
    peak_d = float(np.max(np.abs(scene.ear_signal.samples)))
    gain = float(np.max(np.abs(scene.true_secondary.taps)))
    return 10.0 * peak_d / gain if gain > 0 else 0.0


def chunk_reductions(d: np.ndarray, e: np.ndarray, start: int, fs: int,
                     protocol: EvalProtocol) -> list[tuple[int, float]]:
    """Per-chunk reductions of consecutive chunks from ``start`` to the end."""
    d_f = bandpass(d, protocol, fs)
    e_f = bandpass(e, protocol, fs)
    n = int(round(protocol.chunk_s * fs))
    out = []
    a = start
    while a + n <= len(d):
        out.append((a, reduction_from_filtered(d_f[a : a + n], e_f[a : a + n])))
        a += n
    return out


def simulate_closed_loop(scene, estimator, config: EngineConfig = EngineConfig(),
                         schedule: UpdateSchedule = UpdateSchedule(),
                         options: LoopOptions = LoopOptions(),
                         protocol: EvalProtocol = EvalProtocol()) -> LoopResult:
    """Run the engine sample-synchronously against ``scene``.

    Returns the residual ``e = d + s_eff * out`` together with logs of
    filter updates and per-chunk reductions, counted from the first time a
    filter estimate takes effect.
    """
    fs = scene.sample_rate_hz
    if fs != config.fs:
        raise ValueError(f"scene rate {fs} Hz does not match engine rate {config.fs} Hz")
    N = len(scene)
    L_N = int(round(schedule.context_s * fs))
    L_D = int(round(schedule.update_period_s * fs))
    delay = int(round(schedule.application_delay_s * fs))
    if N < L_N + L_D:
        raise ValueError("scene is shorter than one context window plus one update period")

    lat = config.injected_latency_samples
    s_eff = effective_secondary(scene, lat)
    s_hat = options.s_hat or s_eff
    plant = effective_feedback(scene, lat)
    g_hat = (options.g_hat or plant) if options.afc_enabled else None
    limit = _default_drive_limit(scene) if options.drive_limit is None else options.drive_limit

    M = scene.num_mics
    engine = HybridEngine(AncFilterSet.zeros(M, config.num_taps, fs), g_hat, config,
                          plant_feedback=plant, output_limit=limit)
    x = scene.mic_signals.samples
    d = scene.ear_signal.samples
    out = np.zeros(N)
    clean = np.zeros((M, N))

    estimate_at = list(range(L_N, N, L_D))
    pending: list[tuple[int, AncFilterSet, int]] = []
    events = []
    first_apply = None
    n = 0
    while n < N:
        if estimate_at and estimate_at[0] == n:
            t = estimate_at.pop(0)
            ctx = MultiChannelWaveform(clean[:, t - L_N : t], fs)
            ear = Waveform(d[t - L_N : t], fs) if options.oracle_ear else None
            try:
                w = estimator.estimate(ctx, s_hat, ear, config.num_taps)
                pending.append((t + delay, w, t))
            except Exception as exc:  # estimator failures must not stop the loop
                log.warning("estimator failed at sample %d: %s", t, exc)
                events.append({"event": "estimate_failed", "t_s": t / fs, "error": str(exc)})
        while pending and pending[0][0] == n:
            _, w, t_est = pending.pop(0)
            engine.update_filters(w)
            first_apply = n if first_apply is None else first_apply
            events.append({"event": "filter_update", "t_s": n / fs, "estimated_at_s": t_est / fs})
        stops = [N] + estimate_at[:1] + [p[0] for p in pending[:1]]
        stop = min(s for s in stops if s > n)
        out[n:stop] = engine.process_block(x[:, n:stop])
        clean[:, n:stop] = engine.last_clean
        n = stop

    e = d + convolve_causal(out, s_eff.taps)
    chunks = []
    if first_apply is not None:
        for a, r in chunk_reductions(d, e, first_apply, fs, protocol):
            chunks.append({"event": "chunk", "t_s": a / fs,
                           "reduction_db": r if math.isfinite(r) else str(r)})
    return LoopResult(Waveform(e, fs), Waveform(out, fs), MultiChannelWaveform(clean, fs),
                      events, chunks)
