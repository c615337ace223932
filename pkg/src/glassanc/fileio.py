"""On-disk formats: WAV audio, raw float64 path files, filter sets and
scene bundles.

Path file layout (little-endian)::

    b"GANCPATH" | u32 version | u32 fs | u32 M | M x u32 lengths | float64 taps...

Filter-set layout::

    b"GANCFILT" | u32 version | u32 fs | u32 M | u32 L_C | f64 beta | M*L_C float64 taps
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .config import dumps_json
from .dsp import FirFilter, FirFilterBank, MultiChannelWaveform, Waveform
from .filters import AncFilterSet

PATH_MAGIC = b"GANCPATH"
FILTER_MAGIC = b"GANCFILT"
FORMAT_VERSION = 1


class FormatError(OSError):
    """A file is missing, truncated or not in the expected format."""


# WAV -------------------------------------------------------------------------


def write_wav(path, signal, sample_format: str = "float32"):
    """Write a Waveform or MultiChannelWaveform; ``sample_format`` is ``float32`` or ``pcm16``."""
    data = np.asarray(signal.samples, dtype=np.float64)
    data = data.T if data.ndim == 2 else data
    if sample_format == "float32":
        out = data.astype(np.float32)
    elif sample_format == "pcm16":
        out = np.round(np.clip(data, -1.0, 32767 / 32768) * 32768).astype(np.int16)
    else:
        raise ValueError(f"unsupported WAV sample format {sample_format!r}")
    wavfile.write(str(path), signal.sample_rate_hz, np.ascontiguousarray(out))


def read_wav(path) -> MultiChannelWaveform:
    """Read a mono or multichannel WAV as float64 channels in [-1, 1)."""
    try:
        fs, data = wavfile.read(str(path))
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read WAV {path}: {exc}") from exc
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    elif data.dtype.kind == "f":
        data = data.astype(np.float64)
    else:
        raise FormatError(f"unsupported WAV sample type {data.dtype} in {path}")
    data = data[:, None] if data.ndim == 1 else data
    return MultiChannelWaveform(np.ascontiguousarray(data.T), int(fs))


# raw paths and filters --------------------------------------------------------


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


def write_paths(path, bank: FirFilterBank):
    lengths = [len(f) for f in bank.filters]
    fs = bank.filters[0].sample_rate_hz
    head = PATH_MAGIC + struct.pack(f"<III{len(lengths)}I", FORMAT_VERSION, fs, len(lengths), *lengths)
    body = b"".join(np.asarray(f.taps, dtype="<f8").tobytes() for f in bank.filters)
    Path(path).write_bytes(head + body)


def read_paths(path) -> FirFilterBank:
    blob = _read_bytes(path)
    if blob[:8] != PATH_MAGIC:
        raise FormatError(f"{path}: not a path file")
    try:
        version, fs, M = struct.unpack_from("<III", blob, 8)
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        lengths = struct.unpack_from(f"<{M}I", blob, 20)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header") from exc
    off = 20 + 4 * M
    if len(blob) != off + 8 * sum(lengths):
        raise FormatError(f"{path}: expected {sum(lengths)} taps, file size disagrees")
    data = np.frombuffer(blob, dtype="<f8", offset=off).astype(np.float64)
    filters, i = [], 0
    for n in lengths:
        filters.append(FirFilter(data[i : i + n].copy(), fs))
        i += n
    return FirFilterBank(tuple(filters))


def write_path(path, fir: FirFilter):
    write_paths(path, FirFilterBank((fir,)))


def read_path(path) -> FirFilter:
    bank = read_paths(path)
    if len(bank) != 1:
        raise FormatError(f"{path}: expected one path, found {len(bank)}")
    return bank[0]


def write_filter_set(path, w: AncFilterSet):
    head = FILTER_MAGIC + struct.pack("<IIIId", FORMAT_VERSION, w.fs, w.num_channels, w.length,
                                      w.beta_used)
    Path(path).write_bytes(head + np.asarray(w.taps(), dtype="<f8").tobytes())


def read_filter_set(path) -> AncFilterSet:
    blob = _read_bytes(path)
    if blob[:8] != FILTER_MAGIC:
        raise FormatError(f"{path}: not a filter-set file")
    try:
        version, fs, M, L, beta = struct.unpack_from("<IIIId", blob, 8)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header") from exc
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = 8 + struct.calcsize("<IIIId")
    if len(blob) != off + 8 * M * L:
        raise FormatError(f"{path}: expected {M}x{L} taps, file size disagrees")
    taps = np.frombuffer(blob, dtype="<f8", offset=off).reshape(M, L).astype(np.float64)
    return AncFilterSet.from_taps(taps, fs, beta)


# scene bundles ---------------------------------------------------------------

BUNDLE_FILES = ("mics.wav", "ear.wav", "secondary.path", "feedback.path", "scene.json")


def write_bundle(directory, scene, extra_metadata: dict | None = None) -> Path:
    """Write mic/ear WAVs, true path sidecars and metadata into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_wav(d / "mics.wav", scene.mic_signals)
    write_wav(d / "ear.wav", scene.ear_signal)
    write_path(d / "secondary.path", scene.true_secondary)
    write_paths(d / "feedback.path", scene.true_feedback)
    meta = {"sample_rate_hz": scene.sample_rate_hz, "num_mics": scene.num_mics,
            "num_samples": len(scene), **scene.metadata}
    if scene.geometry is not None:
        g = scene.geometry
        meta["geometry"] = {"mics": g.mic_positions.tolist(), "speaker": g.speaker_position.tolist(),
                            "ear": g.ear_position.tolist(), "side": g.side}
    meta.update(extra_metadata or {})
    (d / "scene.json").write_text(dumps_json(meta, indent=2, sort_keys=True) + "\n")
    return d


def read_bundle(directory):
    """Load a bundle back into a SceneRender (WAV signals, exact paths)."""
    from .scene import ArrayGeometry, SceneRender

    d = Path(directory)
    missing = [f for f in BUNDLE_FILES if not (d / f).is_file()]
    if missing:
        raise FormatError(f"{d}: bundle is missing {', '.join(missing)}")
    try:
        meta = json.loads((d / "scene.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{d}/scene.json: {exc}") from exc
    mics = read_wav(d / "mics.wav")
    ear = read_wav(d / "ear.wav")
    if ear.num_channels != 1 or len(ear) != len(mics) or ear.sample_rate_hz != mics.sample_rate_hz:
        raise FormatError(f"{d}: ear and mic recordings disagree in shape or rate")
    sec = read_path(d / "secondary.path")
    fb = read_paths(d / "feedback.path")
    if len(fb) != mics.num_channels:
        raise FormatError(f"{d}: {len(fb)} feedback paths for {mics.num_channels} mics")
    geo = None
    if "geometry" in meta:
        g = meta["geometry"]
        geo = ArrayGeometry(g["mics"], g["speaker"], g["ear"], g["side"])
    return SceneRender(
        mic_signals=mics,
        ear_signal=Waveform(ear.samples[0], ear.sample_rate_hz),
        true_secondary=sec,
        true_feedback=fb,
        source_to_mic_paths=(),
        source_to_ear_paths=None,
        geometry=geo,
        metadata=meta,
    )
