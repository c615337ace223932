import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glassanc.dsp import FirFilter, Waveform, convolve_causal
from glassanc.scene import (
    ArrayGeometry,
    NoiseSource,
    PathModel,
    SceneError,
    direction_vector,
    doa_sweep,
    evenly_spaced_azimuths,
    make_source,
    render_scene,
    synthesize_path,
)

FS = 22050
GEOM = ArrayGeometry(
    [[-0.03, 0.072, 0.02], [0.02, 0.073, 0.025], [0.06, 0.071, 0.02], [0.088, 0.064, 0.01]],
    [0.02, 0.075, -0.005],
    [0.0, 0.075, 0.0],
)
ANECHOIC = PathModel("anechoic", path_length_taps=512)
ROOM = PathModel("reverberant", 0.3, path_length_taps=4096)


def _peak(h):
    return int(np.argmax(np.abs(h)))


# paths ---------------------------------------------------------------------------


def test_direct_delay_and_spreading():
    # 0.343 m at 343 m/s is 1 ms, i.e. 22.05 samples at 22.05 kHz
    h = synthesize_path([0.343, 0, 0], [0, 0, 0], ANECHOIC, FS).taps
    assert _peak(h) == 22
    # a nearly integer delay keeps almost all energy in one tap with gain 1/r
    h2 = synthesize_path([0.343 * 2, 0, 0], [0, 0, 0], ANECHOIC, FS).taps
    assert _peak(h2) == 44
    assert abs(np.sum(h2) - 1 / 0.686) < 1e-2


def test_paths_are_causal():
    h = synthesize_path([1.5, 0.2, 0], GEOM.ear_position, ROOM, FS).taps
    d = int(np.floor(np.linalg.norm(np.array([1.5, 0.2, 0]) - GEOM.ear_position) / 343 * FS))
    # sinc interpolation leaks a few taps ahead of the direct arrival, nothing earlier
    assert np.all(h[: d - 32] == 0)


def test_path_too_short_is_rejected():
    with pytest.raises(SceneError, match="path_length_taps"):
        synthesize_path([3.0, 0, 0], [0, 0, 0], PathModel(path_length_taps=64), FS)


def test_reverberant_decay_matches_rt60():
    for rt in (0.3, 0.6):
        m = PathModel("reverberant", rt, path_length_taps=16384)
        h = synthesize_path([1.5, 0, 0], [0, 0.07, 0], m, FS).taps
        edc = np.cumsum((h**2)[::-1])[::-1]
        edc_db = 10 * np.log10(edc / edc[0])
        t = np.arange(len(h)) / FS
        sel = (edc_db < -5) & (edc_db > -25)
        slope = np.polyfit(t[sel], edc_db[sel], 1)[0]
        assert abs(-60 / slope - rt) / rt < 0.1


@pytest.mark.parametrize("kind,rt", [("anechoic", 0.3), ("reverberant", 0.0), ("plate", 0.0)])
def test_path_model_validation(kind, rt):
    with pytest.raises(SceneError):
        PathModel(kind, rt)


def test_collinear_mic_ear_lag():
    # mics and ear on one line towards the source: arrival lags equal distance/c
    geom = ArrayGeometry([[0.05, 0, 0], [0.0, 0, 0]], [0, 0, 0.05], [-0.05, 0, 0])
    src = make_source(0.0, 2.0, "white", 3.0, 1, FS)
    r = render_scene(geom, [src], ANECHOIC, 3.0, fs=FS)
    ear = r.source_to_ear_paths[0].taps
    for k, m in enumerate(r.source_to_mic_paths[0]):
        lag = (np.argmax(np.abs(ear)) - np.argmax(np.abs(m.taps)))
        expect = (geom.mic_positions[k][0] - geom.ear_position[0]) / 343 * FS
        assert abs(lag - expect) <= 1


def test_direction_vector_convention():
    assert np.allclose(direction_vector(0), [1, 0, 0])
    # azimuth increases clockwise seen from above: 90 deg is the listener's right (-y)
    assert np.allclose(direction_vector(90), [0, -1, 0])
    assert np.allclose(direction_vector(0, 90), [0, 0, 1])


# geometry ------------------------------------------------------------------------


def test_geometry_validation():
    with pytest.raises(SceneError):
        ArrayGeometry(np.zeros((7, 3)) + 0.01, [0, 0, 0], [0, 0.07, 0])
    with pytest.raises(SceneError, match="0.25 m"):
        ArrayGeometry([[0.3, 0, 0]], [0, 0, 0], [0, 0.07, 0])
    with pytest.raises(SceneError):
        ArrayGeometry([[0.0, 0, 0]], [0, 0, 0], [0, 0.07, 0], side="middle")


def test_geometry_mirror_roundtrip_and_digest():
    m = GEOM.mirrored()
    assert m.side == "right"
    assert np.allclose(m.mirrored().mic_positions, GEOM.mic_positions)
    assert m.digest() != GEOM.digest()
    assert GEOM.digest() == ArrayGeometry(GEOM.mic_positions, GEOM.speaker_position, GEOM.ear_position).digest()


# rendering -----------------------------------------------------------------------


@pytest.fixture(scope="module")
def rendered():
    src = make_source(45.0, 1.5, "pink", 3.0, 5, FS)
    return src, render_scene(GEOM, [src], ROOM, 3.0, seed=3, fs=FS)


def test_render_shapes(rendered):
    _, r = rendered
    n = 3 * FS
    assert r.mic_signals.samples.shape == (4, n)
    assert len(r) == n and r.num_mics == 4
    assert r.true_feedback.as_array().shape[0] == 4
    assert len(r.source_to_mic_paths) == 1 and len(r.source_to_ear_paths) == 1


def test_render_is_consistent_with_paths(rendered):
    src, r = rendered
    s = src.signal.samples[: len(r)]
    assert np.allclose(r.ear_signal.samples, convolve_causal(s, r.source_to_ear_paths[0].taps), atol=1e-9)
    for k, m in enumerate(r.source_to_mic_paths[0]):
        assert np.allclose(r.mic_signals.samples[k], convolve_causal(s, m.taps), atol=1e-9)


def test_render_determinism(rendered):
    src, r = rendered
    again = render_scene(GEOM, [src], ROOM, 3.0, seed=3, fs=FS)
    assert np.array_equal(r.mic_signals.samples, again.mic_signals.samples)
    assert np.array_equal(r.ear_signal.samples, again.ear_signal.samples)
    other = render_scene(GEOM, [src], ROOM, 3.0, seed=4, fs=FS)
    assert not np.array_equal(r.ear_signal.samples, other.ear_signal.samples)


def test_silent_source_gives_silence():
    src = NoiseSource(30.0, 1.5, Waveform(np.zeros(3 * FS), FS))
    r = render_scene(GEOM, [src], ROOM, 3.0, fs=FS)
    assert not np.any(r.mic_signals.samples) and not np.any(r.ear_signal.samples)


def test_superposition_of_sources():
    a = make_source(30.0, 1.5, "pink", 3.0, 1, FS)
    b = make_source(200.0, 2.0, "white", 3.0, 2, FS)
    both = render_scene(GEOM, [a, b], ROOM, 3.0, seed=7, fs=FS)
    ra = render_scene(GEOM, [a], ROOM, 3.0, seed=7, fs=FS)
    rb = render_scene(GEOM, [b], ROOM, 3.0, seed=7, fs=FS)
    assert np.allclose(both.ear_signal.samples, ra.ear_signal.samples + rb.ear_signal.samples, atol=1e-9)
    assert np.allclose(both.mic_signals.samples, ra.mic_signals.samples + rb.mic_signals.samples, atol=1e-9)


def test_muted_source_contributes_nothing():
    a = make_source(30.0, 1.5, "pink", 3.0, 1, FS)
    b = make_source(200.0, 2.0, "white", 3.0, 2, FS, gain_db=-np.inf)
    both = render_scene(GEOM, [a, b], ROOM, 3.0, seed=7, fs=FS)
    ra = render_scene(GEOM, [a], ROOM, 3.0, seed=7, fs=FS)
    assert np.array_equal(both.ear_signal.samples, ra.ear_signal.samples)


def test_sensor_noise_level():
    src = make_source(30.0, 1.5, "pink", 3.0, 1, FS)
    clean = render_scene(GEOM, [src], ANECHOIC, 3.0, seed=1, fs=FS)
    noisy = render_scene(GEOM, [src], ANECHOIC, 3.0, seed=1, fs=FS, sensor_noise_db=-30)
    diff = noisy.mic_signals.samples - clean.mic_signals.samples
    ratio = 10 * np.log10(np.mean(diff**2) / np.mean(clean.mic_signals.samples**2))
    assert abs(ratio + 30) < 0.2
    assert np.array_equal(noisy.ear_signal.samples, clean.ear_signal.samples)


def test_feedback_coupling_level():
    src = make_source(30.0, 1.5, "pink", 3.0, 1, FS)
    r = render_scene(GEOM, [src], ANECHOIC, 3.0, fs=FS, feedback_coupling_db=-12.0)
    e = np.sum(r.true_feedback.as_array() ** 2, axis=1)
    assert abs(10 * np.log10(e.max() / r.true_secondary.energy()) + 12) < 1e-9
    off = r.with_feedback_coupling(-np.inf)
    assert not np.any(off.true_feedback.as_array())


def test_render_validation():
    src = make_source(30.0, 1.5, "pink", 3.0, 1, FS)
    with pytest.raises(SceneError):
        render_scene(GEOM, [], ROOM, 3.0)
    with pytest.raises(SceneError):
        render_scene(GEOM, [src], ROOM, 2.0)
    with pytest.raises(SceneError):
        render_scene(GEOM, [src], ROOM, 5.0)
    with pytest.raises(SceneError, match="far-field"):
        make_source(30.0, 0.1)


def test_select_mics_keeps_paths_aligned(rendered):
    _, r = rendered
    sub = r.select_mics([3, 1])
    assert np.array_equal(sub.mic_signals.samples[0], r.mic_signals.samples[3])
    assert np.array_equal(sub.source_to_mic_paths[0][1].taps, r.source_to_mic_paths[0][1].taps)
    assert sub.geometry.num_mics == 2


@pytest.mark.parametrize("az", [60.0, 0.0, 180.0, 250.0])
def test_mirrored_scene_has_mirrored_paths(az):
    src = make_source(az, 1.5, "pink", 3.0, 1, FS)
    left = render_scene(GEOM, [src], ROOM, 3.0, seed=2, fs=FS)
    right = render_scene(GEOM.mirrored(), [src.at_azimuth(-az)], ROOM, 3.0, seed=2, fs=FS)
    assert np.allclose(left.ear_signal.samples, right.ear_signal.samples, atol=1e-12)
    assert np.allclose(left.mic_signals.samples, right.mic_signals.samples, atol=1e-12)


def test_doa_sweep_rotates_source():
    src = make_source(0.0, 1.5, "white", 3.0, 1, FS)
    angles = evenly_spaced_azimuths(4)
    assert angles == [0.0, 90.0, 180.0, 270.0]
    renders = doa_sweep(GEOM, src, angles, ANECHOIC, 3.0, fs=FS)
    assert [r.metadata["sources"][0]["azimuth_deg"] for r in renders] == angles
    with pytest.raises(SceneError):
        doa_sweep(GEOM, src, [], ANECHOIC, 3.0)


@settings(max_examples=10, deadline=None)
@given(az=st.floats(0, 359), dist=st.floats(0.5, 3.0))
def test_ear_energy_falls_with_distance(az, dist):
    pa, pb = dist * direction_vector(az), 2 * dist * direction_vector(az)
    a = synthesize_path(pa, GEOM.ear_position, ANECHOIC, FS)
    b = synthesize_path(pb, GEOM.ear_position, ANECHOIC, FS)
    # 1/r spreading, measured from the ear rather than the head centre
    ra, rb = np.linalg.norm(pa - GEOM.ear_position), np.linalg.norm(pb - GEOM.ear_position)
    assert abs(10 * np.log10(a.energy() / b.energy()) - 20 * np.log10(rb / ra)) < 0.1
