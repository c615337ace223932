"""Simulation and DSP toolkit for open-ear feedforward noise cancellation.

Scene synthesis, filtered-reference Wiener estimation, sine-sweep path
measurement, feedback cancellation, a hybrid partitioned-convolution
engine and the sweep experiments built on them.
"""

__version__ = "0.1.0"

from .dsp import (
    DEFAULT_FS,
    FirFilter,
    FirFilterBank,
    MultiChannelWaveform,
    SosChain,
    Waveform,
    design_butterworth_bandpass,
    fir_convolve,
    fractional_delay_fir,
    seeded_noise,
    sos_filter,
)
from .engine import EngineConfig, HybridEngine, UpdateSchedule, engine_init
from .filters import AncFilterSet, OracleWienerEstimator, WienerProblem, filtered_reference, wiener_solve
from .metrics import EvalProtocol, noise_reduction_db
from .scene import ArrayGeometry, NoiseSource, PathModel, render_scene

__all__ = [
    "DEFAULT_FS",
    "AncFilterSet",
    "ArrayGeometry",
    "EngineConfig",
    "EvalProtocol",
    "FirFilter",
    "FirFilterBank",
    "HybridEngine",
    "MultiChannelWaveform",
    "NoiseSource",
    "OracleWienerEstimator",
    "PathModel",
    "SosChain",
    "UpdateSchedule",
    "Waveform",
    "WienerProblem",
    "design_butterworth_bandpass",
    "engine_init",
    "filtered_reference",
    "fir_convolve",
    "fractional_delay_fir",
    "noise_reduction_db",
    "render_scene",
    "seeded_noise",
    "sos_filter",
    "wiener_solve",
]
