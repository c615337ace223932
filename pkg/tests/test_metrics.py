import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glassanc.dsp import Waveform, seeded_noise
from glassanc.metrics import EvalProtocol, bandpass, noise_reduction_db

FS = 22050


@pytest.fixture(scope="module")
def d():
    return seeded_noise("pink", 2.0, FS, 0)


def test_identity_is_zero_db(d):
    assert noise_reduction_db(d, d) == 0.0


def test_half_amplitude_is_6db(d):
    e = Waveform(d.samples / 2, FS)
    assert abs(noise_reduction_db(d, e) - 20 * np.log10(2)) <= 1e-3
    assert abs(noise_reduction_db(d, e) - 6.0206) <= 1e-3


def test_silent_residual_is_infinite(d):
    assert noise_reduction_db(d, Waveform(np.zeros(len(d)), FS)) == math.inf


def test_out_of_band_tone_barely_matters(d):
    rng = np.random.default_rng(1)
    e = Waveform(d.samples * 0.3 + 0.05 * rng.standard_normal(len(d)), FS)
    tone = 0.5 * np.sin(2 * np.pi * 5000 * np.arange(len(d)) / FS)
    base = noise_reduction_db(d, e)
    with_tone = noise_reduction_db(Waveform(d.samples + tone, FS), Waveform(e.samples + tone, FS))
    assert abs(with_tone - base) <= 0.05


def test_in_band_only():
    t = np.arange(2 * FS) / FS
    inband = np.sin(2 * np.pi * 300 * t)
    outband = np.sin(2 * np.pi * 4000 * t)
    d = Waveform(inband + outband, FS)
    e = Waveform(0.1 * inband + outband, FS)
    assert abs(noise_reduction_db(d, e, skip_samples=FS // 2) - 20) < 0.2


def test_mismatched_inputs_rejected(d):
    with pytest.raises(ValueError):
        noise_reduction_db(d, Waveform(np.ones(10), FS))
    with pytest.raises(ValueError):
        noise_reduction_db(Waveform(np.ones(10), 8000), Waveform(np.ones(10), 16000))


def test_protocol_validation():
    with pytest.raises(ValueError):
        EvalProtocol(band_low_hz=1000, band_high_hz=100)
    with pytest.raises(ValueError):
        bandpass(np.ones(100), EvalProtocol(band_high_hz=5000), 8000)


signals = st.integers(0, 2**31 - 1).map(lambda s: np.random.default_rng(s).standard_normal(4096))


@settings(max_examples=25, deadline=None)
@given(a=signals, b=signals, k=st.floats(1e-3, 1e3))
def test_scale_invariance(a, b, k):
    d, e = Waveform(a, FS), Waveform(0.5 * a + b, FS)
    ref = noise_reduction_db(d, e)
    scaled = noise_reduction_db(Waveform(k * a, FS), Waveform(k * e.samples, FS))
    assert abs(scaled - ref) <= 1e-9


@settings(max_examples=25, deadline=None)
@given(a=signals, b=signals)
def test_antisymmetry(a, b):
    d, e = Waveform(a, FS), Waveform(b, FS)
    assert abs(noise_reduction_db(d, e) + noise_reduction_db(e, d)) <= 1e-9
