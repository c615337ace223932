"""Acoustic scene synthesis for a one-sided glasses array.

Coordinates are head-centred metres: +x forward, +y to the left, +z up.
Azimuth runs clockwise seen from above, so 0 deg is straight ahead, 90 deg is
the right side and 270 deg the left side.

A path is a direct arrival (fractional delay, 1/r gain) plus, for
reverberant rooms, a seeded cloud of plane-wave reflections. The cloud is
tied to the source position rather than to the receiver, so reflections
reaching nearby receivers stay mutually coherent.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .dsp import (
    DEFAULT_FS,
    DspError,
    FirFilter,
    FirFilterBank,
    MultiChannelWaveform,
    Waveform,
    convolve_causal,
    fractional_delay_fir,
    seeded_noise,
)

HEAD_RADIUS_LIMIT_M = 0.25
MIN_SOURCE_DISTANCE_M = 0.3
MIN_DURATION_S = 3.0


class SceneError(ValueError):
    pass


def _vec3(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise SceneError(f"{name} must be a finite 3-vector, got {v!r}")
    return arr


@dataclass(frozen=True)
class ArrayGeometry:
    mic_positions: np.ndarray
    speaker_position: np.ndarray
    ear_position: np.ndarray
    side: str = "left"

    def __post_init__(self):
        mics = np.atleast_2d(np.asarray(self.mic_positions, dtype=np.float64))
        if mics.ndim != 2 or mics.shape[1] != 3:
            raise SceneError("mic_positions must be a list of 3-vectors")
        if not 1 <= mics.shape[0] <= 6:
            raise SceneError(f"number of mics must be in [1, 6], got {mics.shape[0]}")
        spk = _vec3(self.speaker_position, "speaker_position")
        ear = _vec3(self.ear_position, "ear_position")
        if self.side not in ("left", "right"):
            raise SceneError(f"side must be 'left' or 'right', got {self.side!r}")
        for p in (*mics, spk, ear):
            if np.linalg.norm(p) > HEAD_RADIUS_LIMIT_M:
                raise SceneError(f"position {p.tolist()} is more than 0.25 m from the head centre")
        for arr in (mics, spk, ear):
            arr.setflags(write=False)
        object.__setattr__(self, "mic_positions", mics)
        object.__setattr__(self, "speaker_position", spk)
        object.__setattr__(self, "ear_position", ear)

    @property
    def num_mics(self) -> int:
        return self.mic_positions.shape[0]

    def mirrored(self) -> "ArrayGeometry":
        """Reflect through the median (x-z) plane, swapping the side."""
        flip = np.array([1.0, -1.0, 1.0])
        return ArrayGeometry(
            self.mic_positions * flip,
            self.speaker_position * flip,
            self.ear_position * flip,
            "right" if self.side == "left" else "left",
        )

    def subset(self, channels) -> "ArrayGeometry":
        return replace(self, mic_positions=self.mic_positions[list(channels)])

    def nearest_mic(self, point) -> int:
        return int(np.argmin(np.linalg.norm(self.mic_positions - np.asarray(point), axis=1)))

    def digest(self) -> str:
        blob = np.concatenate(
            [self.mic_positions.ravel(), self.speaker_position, self.ear_position]
        ).tobytes() + self.side.encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def direction_vector(azimuth_deg: float, elevation_deg: float = 0.0) -> np.ndarray:
    az = np.deg2rad(azimuth_deg)
    el = np.deg2rad(elevation_deg)
    return np.array([np.cos(el) * np.cos(az), -np.cos(el) * np.sin(az), np.sin(el)])


@dataclass(frozen=True)
class NoiseSource:
    azimuth_deg: float
    distance_m: float
    signal: Waveform
    elevation_deg: float = 0.0
    gain_db: float = 0.0

    def __post_init__(self):
        if not self.distance_m >= MIN_SOURCE_DISTANCE_M:
            raise SceneError(
                f"source distance {self.distance_m} m below the {MIN_SOURCE_DISTANCE_M} m far-field limit"
            )
        object.__setattr__(self, "azimuth_deg", float(self.azimuth_deg) % 360.0)

    @property
    def position(self) -> np.ndarray:
        return self.distance_m * direction_vector(self.azimuth_deg, self.elevation_deg)

    @property
    def linear_gain(self) -> float:
        return 0.0 if np.isneginf(self.gain_db) else float(10 ** (self.gain_db / 20))

    def at_azimuth(self, azimuth_deg: float) -> "NoiseSource":
        return replace(self, azimuth_deg=azimuth_deg)


@dataclass(frozen=True)
class PathModel:
    kind: str = "anechoic"
    rt60_s: float = 0.0
    reflection_seed: int = 0
    speed_of_sound: float = 343.0
    path_length_taps: int = 2048
    critical_distance_m: float = 1.0
    reflection_density_hz: float = 8000.0
    first_reflection_s: float = 0.003

    def __post_init__(self):
        if self.kind not in ("anechoic", "reverberant"):
            raise SceneError(f"unknown path model kind {self.kind!r}")
        if self.rt60_s < 0:
            raise SceneError("rt60_s must be non-negative")
        if self.kind == "anechoic" and self.rt60_s != 0:
            raise SceneError("anechoic model requires rt60_s = 0")
        if self.kind == "reverberant" and self.rt60_s <= 0:
            raise SceneError("reverberant model requires rt60_s > 0")
        if self.path_length_taps < 64:
            raise SceneError("path_length_taps must be at least 64")
        if self.speed_of_sound <= 0 or self.critical_distance_m <= 0:
            raise SceneError("speed_of_sound and critical_distance_m must be positive")


def _reflection_cloud(source: np.ndarray, model: PathModel, fs: int, mirror: bool = False):
    """Seeded reflections (arrival directions, extra delays, amplitudes) for one source.

    With ``mirror`` the cloud is built for the source reflected through the
    median plane and its arrival directions are reflected back, so a
    mirrored scene (right-side array, mirrored source) gets exactly
    mirrored reverberation, including sources on the median plane.
    """
    flip = np.array([1.0, -1.0, 1.0]) if mirror else np.ones(3)
    key = np.round(source * flip * 1e6).astype(np.int64)
    rng = np.random.default_rng([model.reflection_seed & 0xFFFFFFFF, *[int(k) & 0xFFFFFFFF for k in key]])
    span = model.path_length_taps / fs
    count = int(model.reflection_density_hz * span)
    extra = rng.uniform(model.first_reflection_s, span, count)
    dirs = rng.standard_normal((count, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    if mirror:
        dirs[:, 1] *= -1
    decay = np.exp(-3.0 * np.log(10.0) * extra / model.rt60_s)
    # total tail energy equals direct energy at the critical distance
    amp0 = np.sqrt(6.0 * np.log(10.0) / (model.reflection_density_hz * model.rt60_s)) / model.critical_distance_m
    amps = amp0 * decay * rng.choice([-1.0, 1.0], count)
    return dirs, extra, amps


def _add_fractional(taps: np.ndarray, delays: np.ndarray, amps: np.ndarray, half_width: int = 8):
    n = taps.shape[0]
    base = np.floor(delays).astype(np.int64)
    offsets = np.arange(-half_width + 1, half_width + 1)
    idx = base[:, None] + offsets[None, :]
    t = idx - delays[:, None]
    kernel = np.sinc(t) * 0.5 * (1 + np.cos(np.pi * np.clip(t / half_width, -1, 1)))
    kernel *= amps[:, None]
    ok = (idx >= 0) & (idx < n)
    np.add.at(taps, idx[ok], kernel[ok])


def synthesize_path(
    point_a, point_b, model: PathModel, fs: int = DEFAULT_FS, *, source_origin=None, mirror: bool = False
) -> FirFilter:
    """Impulse response from ``point_a`` (emitter) to ``point_b`` (receiver).

    ``source_origin`` optionally names the emitter position that seeds the
    reflection cloud; it defaults to ``point_a``. ``mirror`` selects the
    median-plane reflection of the cloud (used for right-side arrays).
    """
    a = _vec3(point_a, "point_a")
    b = _vec3(point_b, "point_b")
    dist = float(np.linalg.norm(a - b))
    if dist <= 0:
        raise SceneError("path endpoints must be distinct")
    delay = dist / model.speed_of_sound * fs
    if delay > model.path_length_taps - 2:
        raise SceneError(
            f"path_length_taps={model.path_length_taps} too short for a direct delay of {delay:.1f} samples"
        )
    taps = fractional_delay_fir(delay, model.path_length_taps, fs).taps / dist
    if model.kind == "reverberant":
        origin = a if source_origin is None else _vec3(source_origin, "source_origin")
        dirs, extra, amps = _reflection_cloud(origin, model, fs, mirror)
        arrival = (np.linalg.norm(origin) / model.speed_of_sound + extra - dirs @ b / model.speed_of_sound) * fs
        keep = arrival > delay
        _add_fractional(taps, arrival[keep], amps[keep])
    return FirFilter(taps, fs)


@dataclass(frozen=True)
class SceneRender:
    mic_signals: MultiChannelWaveform
    ear_signal: Waveform
    true_secondary: FirFilter
    true_feedback: FirFilterBank
    source_to_mic_paths: tuple
    source_to_ear_paths: FirFilterBank
    geometry: ArrayGeometry | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def sample_rate_hz(self) -> int:
        return self.ear_signal.sample_rate_hz

    @property
    def num_mics(self) -> int:
        return self.mic_signals.num_channels

    def __len__(self) -> int:
        return len(self.ear_signal)

    def select_mics(self, channels) -> "SceneRender":
        channels = list(channels)
        return replace(
            self,
            mic_signals=self.mic_signals.select(channels),
            true_feedback=FirFilterBank(tuple(self.true_feedback[c] for c in channels)),
            source_to_mic_paths=tuple(
                FirFilterBank(tuple(bank[c] for c in channels)) for bank in self.source_to_mic_paths
            ),
            geometry=self.geometry.subset(channels) if self.geometry is not None else None,
            metadata={**self.metadata, "mic_subset": channels},
        )

    def with_feedback_coupling(self, coupling_db: float) -> "SceneRender":
        """Rescale the feedback paths so the nearest mic sits ``coupling_db`` below the secondary path."""
        taps = self.true_feedback.as_array()
        e = np.sum(taps**2, axis=1)
        if np.isneginf(coupling_db) or np.max(e) == 0:
            taps = np.zeros_like(taps)
        else:
            taps *= np.sqrt(self.true_secondary.energy() * 10 ** (coupling_db / 10) / np.max(e))
        return replace(
            self,
            true_feedback=FirFilterBank.from_array(taps, self.sample_rate_hz),
            metadata={**self.metadata, "feedback_coupling_db": coupling_db},
        )


def speaker_paths(
    geometry: ArrayGeometry, model: PathModel, fs: int, coupling_db: float = -20.0
) -> tuple[FirFilter, FirFilterBank]:
    """Secondary path (speaker to ear) and feedback paths (speaker to each mic).

    The near-field speaker paths are anechoic: at a few centimetres the
    direct sound dominates any room contribution by tens of dB.
    """
    near = replace(model, kind="anechoic", rt60_s=0.0)
    spk = geometry.speaker_position
    secondary = synthesize_path(spk, geometry.ear_position, near, fs)
    fb = np.stack([synthesize_path(spk, m, near, fs).taps for m in geometry.mic_positions])
    if np.isneginf(coupling_db):
        fb[:] = 0.0
    else:
        nearest = np.max(np.sum(fb**2, axis=1))
        fb *= np.sqrt(secondary.energy() * 10 ** (coupling_db / 10) / nearest)
    return secondary, FirFilterBank.from_array(fb, fs)


def render_scene(
    geometry: ArrayGeometry,
    sources,
    model: PathModel,
    duration_s: float,
    seed: int = 0,
    fs: int = DEFAULT_FS,
    feedback_coupling_db: float = -20.0,
    sensor_noise_db: float = -np.inf,
) -> SceneRender:
    """Render mic signals, ear signal and ground-truth paths for a scene.

    ``seed`` is folded into the reflection seed so that one scene seed fixes
    every random choice; the source signals carry their own content.
    ``sensor_noise_db`` adds independent white noise to every mic at that
    level relative to the mean mic power (off by default, which keeps
    renders exactly linear in the sources).
    """
    sources = list(sources)
    if not sources:
        raise SceneError("at least one noise source is required")
    if duration_s < MIN_DURATION_S:
        raise SceneError(f"duration {duration_s} s is shorter than the {MIN_DURATION_S} s minimum")
    n = int(round(duration_s * fs))
    model = replace(model, reflection_seed=(model.reflection_seed * 1_000_003 + seed) & 0x7FFFFFFF)
    mics = np.zeros((geometry.num_mics, n))
    ear = np.zeros(n)
    mirror = geometry.side == "right"
    mic_banks = []
    ear_paths = []
    for src in sources:
        if src.signal.sample_rate_hz != fs:
            raise SceneError("source signal sample rate does not match the scene")
        if len(src.signal) < n:
            raise SceneError(f"source signal has {len(src.signal)} samples, scene needs {n}")
        pos = src.position
        bank = FirFilterBank(
            tuple(synthesize_path(pos, m, model, fs, mirror=mirror) for m in geometry.mic_positions)
        )
        ear_path = synthesize_path(pos, geometry.ear_position, model, fs, mirror=mirror)
        mic_banks.append(bank)
        ear_paths.append(ear_path)
        g = src.linear_gain
        if g == 0.0:
            continue
        s = src.signal.samples[:n]
        mics += g * convolve_causal(np.broadcast_to(s, mics.shape), bank.as_array())
        ear += g * convolve_causal(s, ear_path.taps)
    if np.isfinite(sensor_noise_db):
        rng = np.random.default_rng([seed, 0x5E75])
        level = np.sqrt(np.mean(mics**2) * 10 ** (sensor_noise_db / 10))
        mics = mics + level * rng.standard_normal(mics.shape)
    secondary, feedback = speaker_paths(geometry, model, fs, feedback_coupling_db)
    return SceneRender(
        mic_signals=MultiChannelWaveform(mics, fs),
        ear_signal=Waveform(ear, fs),
        true_secondary=secondary,
        true_feedback=feedback,
        source_to_mic_paths=tuple(mic_banks),
        source_to_ear_paths=FirFilterBank(tuple(ear_paths)),
        geometry=geometry,
        metadata={
            "seed": seed,
            "duration_s": duration_s,
            "geometry_hash": geometry.digest(),
            "path_model": model.kind,
            "rt60_s": model.rt60_s,
            "feedback_coupling_db": feedback_coupling_db,
            "sensor_noise_db": sensor_noise_db,
            "sources": [
                {"azimuth_deg": s.azimuth_deg, "distance_m": s.distance_m,
                 "elevation_deg": s.elevation_deg, "gain_db": s.gain_db}
                for s in sources
            ],
        },
    )


def doa_sweep(
    geometry: ArrayGeometry,
    source: NoiseSource,
    angles,
    model: PathModel,
    duration_s: float,
    seed: int = 0,
    fs: int = DEFAULT_FS,
    feedback_coupling_db: float = -20.0,
    sensor_noise_db: float = -np.inf,
) -> list[SceneRender]:
    """One render per azimuth; the array stays fixed and the source rotates."""
    angles = list(angles)
    if not angles:
        raise SceneError("angles must be non-empty")
    return [
        render_scene(geometry, [source.at_azimuth(a)], model, duration_s, seed, fs,
                     feedback_coupling_db, sensor_noise_db)
        for a in angles
    ]


def evenly_spaced_azimuths(count: int = 36) -> list[float]:
    return [360.0 * k / count for k in range(count)]


def make_source(
    azimuth_deg: float,
    distance_m: float,
    noise: str = "pink",
    duration_s: float = 10.0,
    seed: int = 0,
    fs: int = DEFAULT_FS,
    elevation_deg: float = 0.0,
    gain_db: float = 0.0,
) -> NoiseSource:
    try:
        sig = seeded_noise(noise, duration_s, fs, seed)
    except DspError as exc:
        raise SceneError(str(exc)) from exc
    return NoiseSource(azimuth_deg, distance_m, sig, elevation_deg, gain_db)
