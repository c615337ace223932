"""Experiment configuration: TOML files describing geometries, scenes and
evaluation settings.

Every error names the offending field and, where the source text is
available, the line it came from.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
import tomli

from .dsp import DEFAULT_FS
from .engine import EngineConfig, EngineError, UpdateSchedule
from .metrics import EvalProtocol
from .scene import ArrayGeometry, PathModel, SceneError, make_source, render_scene


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class SourceSpec:
    azimuth_deg: float
    distance_m: float = 1.5
    noise: str = "pink"
    seed: int = 0
    elevation_deg: float = 0.0
    gain_db: float = 0.0


@dataclass(frozen=True)
class SceneSpec:
    name: str
    geometry: ArrayGeometry
    sources: tuple
    room: PathModel = PathModel()
    duration_s: float = 4.5
    seed: int = 0
    sensor_noise_db: float = -np.inf
    feedback_coupling_db: float = -20.0
    geometry_name: str = ""

    def render(self, fs: int = DEFAULT_FS):
        srcs = [
            make_source(s.azimuth_deg, s.distance_m, s.noise, self.duration_s, s.seed, fs,
                        s.elevation_deg, s.gain_db)
            for s in self.sources
        ]
        return render_scene(self.geometry, srcs, self.room, self.duration_s, self.seed, fs,
                            self.feedback_coupling_db, self.sensor_noise_db)

    def with_sources(self, sources) -> "SceneSpec":
        return replace(self, sources=tuple(sources))

    def mirrored(self) -> "SceneSpec":
        """Mirror geometry and source bearings through the median plane."""
        srcs = [replace(s, azimuth_deg=(360.0 - s.azimuth_deg) % 360.0) for s in self.sources]
        return replace(self, geometry=self.geometry.mirrored(), sources=tuple(srcs),
                       name=self.name + "-mirror")

    def describe(self) -> dict:
        return {
            "name": self.name,
            "geometry": self.geometry_name,
            "geometry_hash": self.geometry.digest(),
            "side": self.geometry.side,
            "seed": self.seed,
            "duration_s": self.duration_s,
            "room": {"kind": self.room.kind, "rt60_s": self.room.rt60_s,
                     "path_length_taps": self.room.path_length_taps,
                     "reflection_seed": self.room.reflection_seed},
            "sensor_noise_db": _jsonable(self.sensor_noise_db),
            "feedback_coupling_db": _jsonable(self.feedback_coupling_db),
            "sources": [asdict(s) for s in self.sources],
        }


@dataclass(frozen=True)
class DoaSettings:
    scene: str = ""  # name of the suite scene used as template
    num_angles: int = 36
    num_taps: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    engine: EngineConfig = EngineConfig()
    schedule: UpdateSchedule = UpdateSchedule()
    protocol: EvalProtocol = EvalProtocol()
    geometries: dict = field(default_factory=dict)
    scenes: tuple = ()
    doa: DoaSettings = DoaSettings()
    raw: dict = field(default_factory=dict)
    source_text: str = ""

    def scene(self, name_or_index) -> SceneSpec:
        if isinstance(name_or_index, int):
            return self.scenes[name_or_index]
        for s in self.scenes:
            if s.name == name_or_index:
                return s
        raise ConfigError(f"scenes: no scene named {name_or_index!r}")

    def content_hash(self) -> str:
        return hashlib.sha256(self.source_text.encode()).hexdigest()[:16]

    def resolved(self) -> dict:
        """The fully resolved configuration as plain JSON data."""
        return {
            "engine": asdict(self.engine),
            "schedule": asdict(self.schedule),
            "protocol": asdict(self.protocol),
            "scenes": [s.describe() for s in self.scenes],
            "doa": asdict(self.doa),
        }


def _jsonable(v):
    if isinstance(v, float) and not np.isfinite(v):
        return str(v)
    return v


def _parse_db(v, where: str, line) -> float:
    if isinstance(v, str) and v.strip().lower() in ("-inf", "off"):
        return -np.inf
    if isinstance(v, (int, float)):
        return float(v)
    raise ConfigError(f"{where}: expected a number or '-inf', got {v!r}", line)


class _Lines:
    """Maps keys and table headers back to line numbers in the source text."""

    def __init__(self, text: str):
        self.lines = text.splitlines()

    def table(self, header: str, index: int = 0) -> int | None:
        pat = re.compile(r"^\s*\[{1,2}\s*" + re.escape(header) + r"\s*\]{1,2}\s*(#.*)?$")
        hits = [i + 1 for i, ln in enumerate(self.lines) if pat.match(ln)]
        return hits[index] if index < len(hits) else None

    def key(self, key: str, after: int | None = None) -> int | None:
        pat = re.compile(r"^\s*" + re.escape(key) + r"\s*=")
        for i, ln in enumerate(self.lines):
            if (after is None or i + 1 >= after) and pat.match(ln):
                return i + 1
        return None


def _take(table: dict, key: str, where: str, line, kind=None, default=...):
    if key not in table:
        if default is ...:
            raise ConfigError(f"{where}.{key}: missing required field", line)
        return default
    v = table[key]
    if kind is not None and (not isinstance(v, kind) or isinstance(v, bool) and kind is not bool):
        raise ConfigError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {v!r}", line)
    return v


_NUM = (int, float)


def _geometry(name: str, t: dict, lines: _Lines) -> ArrayGeometry:
    line = lines.table(f"geometries.{name}")
    where = f"geometries.{name}"
    try:
        return ArrayGeometry(
            _take(t, "mics", where, line, list),
            _take(t, "speaker", where, line, list),
            _take(t, "ear", where, line, list),
            _take(t, "side", where, line, str, "left"),
        )
    except SceneError as exc:
        raise ConfigError(f"{where}: {exc}", line) from None


def _scene(i: int, t: dict, geos: dict, lines: _Lines) -> SceneSpec:
    line = lines.table("scenes", i)
    name = t.get("name", f"scene{i}")
    where = f"scenes[{i}]"
    gname = _take(t, "geometry", where, line, str)
    if gname not in geos:
        raise ConfigError(f"{where}.geometry: unknown geometry {gname!r}", line)
    geo = geos[gname]
    side = _take(t, "side", where, line, str, geo.side)
    if side != geo.side:
        geo = geo.mirrored()
    seed = int(_take(t, "seed", where, line, int, 0))
    room_t = _take(t, "room", where, line, dict, {})
    try:
        room = PathModel(
            kind=room_t.get("kind", "anechoic"),
            rt60_s=float(room_t.get("rt60_s", 0.0)),
            reflection_seed=int(room_t.get("reflection_seed", 0)),
            speed_of_sound=float(room_t.get("speed_of_sound", 343.0)),
            path_length_taps=int(room_t.get("path_length_taps", 2048)),
            critical_distance_m=float(room_t.get("critical_distance_m", 1.0)),
        )
    except (SceneError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.room: {exc}", line) from None
    srcs_t = _take(t, "sources", where, line, list)
    if not srcs_t:
        raise ConfigError(f"{where}.sources: at least one source is required", line)
    sources = []
    for j, s in enumerate(srcs_t):
        sw = f"{where}.sources[{j}]"
        sources.append(SourceSpec(
            azimuth_deg=float(_take(s, "azimuth_deg", sw, line, _NUM)),
            distance_m=float(_take(s, "distance_m", sw, line, _NUM, 1.5)),
            noise=str(_take(s, "noise", sw, line, str, "pink")),
            seed=int(_take(s, "seed", sw, line, int, seed * 100 + j)),
            elevation_deg=float(_take(s, "elevation_deg", sw, line, _NUM, 0.0)),
            gain_db=_parse_db(s.get("gain_db", 0.0), f"{sw}.gain_db", line),
        ))
    duration = float(_take(t, "duration_s", where, line, _NUM, 4.5))
    return SceneSpec(
        name=name,
        geometry=geo,
        sources=tuple(sources),
        room=room,
        duration_s=duration,
        seed=seed,
        sensor_noise_db=_parse_db(t.get("sensor_noise_db", "-inf"), f"{where}.sensor_noise_db", line),
        feedback_coupling_db=_parse_db(t.get("feedback_coupling_db", -20.0),
                                       f"{where}.feedback_coupling_db", line),
        geometry_name=gname,
    )


def _dataclass_from(cls, t: dict, where: str, line):
    known = set(cls.__dataclass_fields__)
    extra = set(t) - known
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {sorted(extra)}", line)
    try:
        return cls(**t)
    except (TypeError, ValueError, EngineError) as exc:
        raise ConfigError(f"{where}: {exc}", line) from None


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"malformed config: {exc}", int(m.group(1)) if m else None) from None
    lines = _Lines(text)
    engine = _dataclass_from(EngineConfig, raw.get("engine", {}), "engine", lines.table("engine"))
    schedule = _dataclass_from(UpdateSchedule, raw.get("schedule", {}), "schedule", lines.table("schedule"))
    protocol = _dataclass_from(EvalProtocol, raw.get("protocol", {}), "protocol", lines.table("protocol"))
    geos_t = raw.get("geometries", {})
    if not isinstance(geos_t, dict):
        raise ConfigError("geometries: expected a table of named geometries", lines.key("geometries"))
    geos = {name: _geometry(name, t, lines) for name, t in geos_t.items()}
    scenes_t = raw.get("scenes", [])
    if not isinstance(scenes_t, list):
        raise ConfigError("scenes: expected an array of tables ([[scenes]])", lines.key("scenes"))
    scenes = tuple(_scene(i, t, geos, lines) for i, t in enumerate(scenes_t))
    names = [s.name for s in scenes]
    if len(set(names)) != len(names):
        raise ConfigError("scenes: scene names must be unique")
    doa = _dataclass_from(DoaSettings, raw.get("doa", {}), "doa", lines.table("doa"))
    if doa.scene and doa.scene not in names:
        raise ConfigError(f"doa.scene: unknown scene {doa.scene!r}", lines.key("scene", lines.table("doa")))
    return ExperimentConfig(engine, schedule, protocol, geos, scenes, doa, raw, text)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def bundled_config_text(name: str = "standard_suite.toml") -> str:
    return resources.files("glassanc.data").joinpath(name).read_text()


def standard_suite() -> ExperimentConfig:
    return parse_config(bundled_config_text())


def dumps_json(obj, **kw) -> str:
    """``json.dumps`` that writes non-finite floats as strings."""

    def fix(o):
        if isinstance(o, float) and not np.isfinite(o):
            return str(o)
        if isinstance(o, dict):
            return {k: fix(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [fix(v) for v in o]
        if isinstance(o, np.generic):
            return fix(o.item())
        if isinstance(o, np.ndarray):
            return fix(o.tolist())
        return o

    return json.dumps(fix(obj), **kw)
