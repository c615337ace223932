"""Chunked evaluation and the sweep experiments.

Offline mode follows the recorded-audio protocol: estimate filters on a
2 s context, apply them to the 0.5 s chunk that starts after the
application delay, then hop by one chunk. Closed-loop mode runs the
real-time engine against the scene and reads the same per-chunk numbers
from its logs.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .closed_loop import LoopOptions, effective_secondary, simulate_closed_loop
from .config import SceneSpec, SourceSpec, dumps_json
from .dsp import MultiChannelWaveform, Waveform, convolve_causal
from .engine import EngineConfig, UpdateSchedule
from .filters import OracleWienerEstimator
from .metrics import EvalProtocol, bandpass, reduction_from_filtered

MODES = ("offline", "closed-loop")


@dataclass
class EvalReport:
    label: str
    mode: str
    chunk_reductions: list
    chunk_times_s: list = field(default_factory=list)
    axis: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    residual: np.ndarray | None = field(default=None, repr=False)  # chunk residuals or full loop residual
    log: list = field(default_factory=list, repr=False)

    @property
    def mean(self) -> float:
        return float(np.mean(self.chunk_reductions)) if self.chunk_reductions else math.nan

    @property
    def std(self) -> float:
        return float(np.std(self.chunk_reductions)) if self.chunk_reductions else math.nan

    def to_dict(self) -> dict:
        return {"label": self.label, "mode": self.mode, "axis": self.axis,
                "mean_db": self.mean, "std_db": self.std,
                "chunk_reductions_db": list(self.chunk_reductions),
                "chunk_times_s": list(self.chunk_times_s), "provenance": self.provenance}


def offline_chunks(num_samples: int, fs: int, protocol: EvalProtocol):
    """Yield ``(context_start, context_end, chunk_start, chunk_end)`` sample indices."""
    L_N = int(round(protocol.context_s * fs))
    delay = int(round(protocol.application_delay_s * fs))
    n = int(round(protocol.chunk_s * fs))
    t = 0
    while t + L_N + delay + n <= num_samples:
        yield t, t + L_N, t + L_N + delay, t + L_N + delay + n
        t += n


def _offline_eval(scene, estimator, config: EngineConfig, protocol: EvalProtocol, s_hat):
    fs = scene.sample_rate_hz
    L = config.num_taps
    s_eff = effective_secondary(scene, config.injected_latency_samples)
    s_hat = s_hat or s_eff
    x = scene.mic_signals.samples
    d = scene.ear_signal.samples
    d_f = bandpass(d, protocol, fs)
    warm = int(round(protocol.warmup_s * fs))
    values, times, residual = [], [], []
    for c0, c1, a0, a1 in offline_chunks(len(d), fs, protocol):
        w = estimator.estimate(MultiChannelWaveform(x[:, c0:c1], fs), s_hat, Waveform(d[c0:c1], fs), L)
        # anti-noise over the chunk plus a settling lead-in, with full input history
        s0 = max(0, a0 - warm - L - len(s_eff))
        y = np.sum(convolve_causal(x[:, s0:a1], w.taps()), axis=0)
        d_hat = convolve_causal(y, s_eff.taps)
        b0 = max(0, a0 - warm - s0)
        e_hat_f = bandpass(d_hat[b0:], protocol, fs)[a0 - s0 - b0 :]
        values.append(reduction_from_filtered(d_f[a0:a1], d_f[a0:a1] + e_hat_f))
        times.append(a0 / fs)
        residual.append(d[a0:a1] + d_hat[a0 - s0 :])
    return values, times, residual


def run_chunked_eval(scene, estimator=None, config: EngineConfig = EngineConfig(),
                     protocol: EvalProtocol = EvalProtocol(), mode: str = "offline",
                     schedule: UpdateSchedule = UpdateSchedule(), options: LoopOptions = LoopOptions(),
                     s_hat=None, label: str = "", axis: dict | None = None,
                     provenance: dict | None = None, min_chunks: int = 4) -> EvalReport:
    """Per-chunk noise reduction of ``estimator`` on a rendered scene.

    ``s_hat`` is the secondary-path model given to the estimator; it
    defaults to the true path including the injected latency.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    estimator = estimator or OracleWienerEstimator()
    fs = scene.sample_rate_hz
    if mode == "offline":
        n_chunks = sum(1 for _ in offline_chunks(len(scene), fs, protocol))
        if n_chunks < min_chunks:
            raise ValueError(f"scene yields {n_chunks} chunks, need at least {min_chunks}")
        values, times, chunks = _offline_eval(scene, estimator, config, protocol, s_hat)
        residual = np.concatenate(chunks)
        log = [{"event": "chunk", "t_s": t, "reduction_db": v} for t, v in zip(times, values)]
    else:
        if s_hat is not None:
            options = replace(options, s_hat=s_hat)
        res = simulate_closed_loop(scene, estimator, config, schedule, options, protocol)
        values = [float(c["reduction_db"]) for c in res.chunks]
        times = [c["t_s"] for c in res.chunks]
        residual = res.residual.samples
        log = res.log_records()
        if len(values) < min_chunks:
            raise ValueError(f"closed loop produced {len(values)} chunks, need at least {min_chunks}")
    prov = {"seed": scene.metadata.get("seed"), "geometry_hash": scene.metadata.get("geometry_hash"),
            "num_taps": config.num_taps, "block_size": config.block_size,
            "injected_latency_samples": config.injected_latency_samples,
            "estimator": getattr(estimator, "name", type(estimator).__name__)}
    prov.update(provenance or {})
    return EvalReport(label, mode, values, times, dict(axis or {}), prov, residual, log)


# sweeps ------------------------------------------------------------------------


@dataclass
class SweepResult:
    kind: str
    axis_name: str
    reports: list
    extra: dict = field(default_factory=dict)

    def axis_values(self) -> list:
        seen = []
        for r in self.reports:
            v = r.axis[self.axis_name]
            if v not in seen:
                seen.append(v)
        return seen

    def summary(self) -> list[dict]:
        """One row per axis value: mean over scenes of the per-scene means."""
        rows = []
        for v in self.axis_values():
            means = [r.mean for r in self.reports if r.axis[self.axis_name] == v]
            rows.append({self.axis_name: v, "mean_db": float(np.mean(means)),
                         "std_db": float(np.std(means)), "num_scenes": len(means)})
        return rows

    def means(self) -> list[float]:
        return [row["mean_db"] for row in self.summary()]

    def to_json(self) -> str:
        return dumps_json({"kind": self.kind, "axis": self.axis_name, "summary": self.summary(),
                           "extra": self.extra, "reports": [r.to_dict() for r in self.reports]},
                          indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf)
        wr.writerow(["kind", "label", self.axis_name, "mode", "chunk", "chunk_t_s", "reduction_db"])
        for r in self.reports:
            for i, (t, v) in enumerate(zip(r.chunk_times_s, r.chunk_reductions)):
                wr.writerow([self.kind, r.label, r.axis[self.axis_name], r.mode, i, f"{t:.4f}", f"{v:.6f}"])
        return buf.getvalue()

    def plot_data(self) -> str:
        """Whitespace-separated ``axis mean std`` columns for gnuplot."""
        lines = [f"# {self.axis_name} mean_db std_db"]
        for row in self.summary():
            v = row[self.axis_name]
            v = v if isinstance(v, (int, float)) else f'"{v}"'
            lines.append(f"{v} {row['mean_db']:.6f} {row['std_db']:.6f}")
        return "\n".join(lines) + "\n"


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*items)))


def _eval_spec(spec: SceneSpec, estimator, config, protocol, mode, axis, mics=None, fs=None):
    scene = spec.render(fs or config.fs)
    if mics is not None:
        scene = scene.select_mics(mics)
    return run_chunked_eval(scene, estimator, config, protocol, mode, label=spec.name, axis=axis,
                            provenance={"scene": spec.describe()})


def _require(specs):
    specs = list(specs)
    if not specs:
        raise ValueError("the scene suite is empty")
    return specs


def sweep_taps(specs, values=(512, 1024, 2048, 4096), config: EngineConfig = EngineConfig(),
               protocol: EvalProtocol = EvalProtocol(), estimator=None, mode: str = "offline",
               workers: int = 1) -> SweepResult:
    specs = _require(specs)
    configs = [replace(config, num_taps=int(v)) for v in values]  # validates L % B up front
    items = [(s, estimator or OracleWienerEstimator(), c, protocol, mode, {"num_taps": c.num_taps})
             for c in configs for s in specs]
    return SweepResult("taps", "num_taps", _map(_eval_spec, items, workers))


def sweep_latency(specs, values=(1, 2, 4, 8, 16), config: EngineConfig = EngineConfig(),
                  protocol: EvalProtocol = EvalProtocol(), estimator=None, mode: str = "offline",
                  workers: int = 1) -> SweepResult:
    specs = _require(specs)
    configs = [replace(config, injected_latency_samples=int(v)) for v in values]
    items = [(s, estimator or OracleWienerEstimator(), c, protocol, mode,
              {"latency_samples": c.injected_latency_samples}) for c in configs for s in specs]
    return SweepResult("latency", "latency_samples", _map(_eval_spec, items, workers))


def sweep_doa(spec: SceneSpec, num_angles: int = 36, sides=("left", "right"),
              config: EngineConfig = EngineConfig(), protocol: EvalProtocol = EvalProtocol(),
              estimator=None, mode: str = "offline", workers: int = 1, angles=None) -> SweepResult:
    """Rotate the first source of ``spec`` around the head for each array side."""
    if angles is None:
        angles = [360.0 * k / num_angles for k in range(num_angles)]
    angles = list(angles)
    if not angles:
        raise ValueError("no azimuths to evaluate")
    items = []
    for side in sides:
        base = spec if spec.geometry.side == side else spec.mirrored()
        for a in angles:
            srcs = (replace(base.sources[0], azimuth_deg=float(a)),) + tuple(base.sources[1:])
            s = replace(base, sources=srcs, name=f"{spec.name}-{side}-{a:g}")
            items.append((s, estimator or OracleWienerEstimator(), config, protocol, mode,
                          {"azimuth_deg": float(a), "side": side}))
    return SweepResult("doa", "azimuth_deg", _map(_eval_spec, items, workers))


def doa_profile(result: SweepResult, side: str) -> tuple[np.ndarray, np.ndarray]:
    """Azimuths and per-angle mean reduction for one side."""
    pts = [(r.axis["azimuth_deg"], r.mean) for r in result.reports if r.axis["side"] == side]
    pts.sort()
    return np.array([p[0] for p in pts]), np.array([p[1] for p in pts])


def sweep_mics(specs, counts=(1, 2, 3, 4), config: EngineConfig = EngineConfig(),
               protocol: EvalProtocol = EvalProtocol(), estimator=None, mode: str = "offline",
               workers: int = 1) -> SweepResult:
    """All channel subsets per count; the best subset is chosen per geometry.

    The reported value for a count is the mean, over geometries, of the
    best subset's mean reduction on that geometry's scenes.
    """
    specs = _require(specs)
    groups: dict = {}
    for s in specs:
        groups.setdefault(s.geometry.digest(), []).append(s)
    items = []
    for key, group in groups.items():
        M = group[0].geometry.num_mics
        for k in counts:
            if k > M:
                raise ValueError(f"cannot choose {k} of {M} mics")
            for subset in itertools.combinations(range(M), k):
                for s in group:
                    items.append((s, estimator or OracleWienerEstimator(), config, protocol, mode,
                                  {"num_mics": k, "subset": list(subset), "geometry": key}, list(subset)))
    reports = _map(_eval_spec, items, workers)
    best_reports, best = [], {}
    for key in groups:
        for k in counts:
            by_subset: dict = {}
            for r in reports:
                if r.axis["geometry"] == key and r.axis["num_mics"] == k:
                    by_subset.setdefault(tuple(r.axis["subset"]), []).append(r)
            sub, rs = max(by_subset.items(), key=lambda kv: np.mean([r.mean for r in kv[1]]))
            best[f"{key}/{k}"] = {"subset": list(sub), "mean_db": float(np.mean([r.mean for r in rs]))}
            best_reports.extend(rs)
    return SweepResult("mics", "num_mics", best_reports,
                       {"best_subsets": best, "all_subsets": [r.to_dict() for r in reports]})


def extra_sources(spec: SceneSpec, count: int) -> tuple:
    """The first ``count`` sources: the scene's own plus seeded extra bearings."""
    base = spec.sources[0]
    rng = np.random.default_rng([spec.seed, 0x50C])
    out = [base]
    for j in range(1, count):
        az = float((base.azimuth_deg + rng.uniform(60.0, 300.0)) % 360.0)
        out.append(SourceSpec(round(az, 3), base.distance_m, base.noise, base.seed + 1000 * j,
                              base.elevation_deg, base.gain_db))
    return tuple(out)


def sweep_sources(specs, counts=(1, 2, 3), config: EngineConfig = EngineConfig(),
                  protocol: EvalProtocol = EvalProtocol(), estimator=None, mode: str = "offline",
                  workers: int = 1) -> SweepResult:
    specs = _require(specs)
    items = [(s.with_sources(extra_sources(s, k)), estimator or OracleWienerEstimator(), config,
              protocol, mode, {"num_sources": k}) for k in counts for s in specs]
    return SweepResult("sources", "num_sources", _map(_eval_spec, items, workers))


SWEEPS = {"taps": sweep_taps, "latency": sweep_latency, "mics": sweep_mics, "sources": sweep_sources}
