import json

import numpy as np
import pytest

from glassanc.config import ConfigError, dumps_json, load_config, parse_config, standard_suite

GOOD = """
[engine]
block_size = 64
num_taps = 512

[geometries.g]
mics = [[0.02, 0.07, 0.02], [0.06, 0.07, 0.02]]
speaker = [0.02, 0.075, -0.005]
ear = [0.0, 0.075, 0.0]

[[scenes]]
name = "one"
geometry = "g"
seed = 3
sensor_noise_db = -30
room = {kind = "reverberant", rt60_s = 0.3, path_length_taps = 4096}
sources = [{azimuth_deg = 30, noise = "pink"}, {azimuth_deg = 200, gain_db = "-inf"}]

[[scenes]]
name = "two"
geometry = "g"
side = "right"
sources = [{azimuth_deg = 90}]
"""


def _error(text):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    return info.value


def test_parse_good_config():
    cfg = parse_config(GOOD)
    assert cfg.engine.block_size == 64 and cfg.engine.num_taps == 512
    one, two = cfg.scenes
    assert one.room.rt60_s == 0.3 and one.sensor_noise_db == -30
    assert one.sources[1].gain_db == -np.inf
    assert one.sources[0].seed == 300  # seed * 100 + index by default
    assert two.geometry.side == "right" and two.geometry.mic_positions[0, 1] == -0.07
    assert cfg.scene("two") is two and cfg.scene(0) is one


def test_resolved_config_is_json():
    cfg = parse_config(GOOD)
    data = json.loads(dumps_json(cfg.resolved()))
    assert data["engine"]["num_taps"] == 512
    assert data["scenes"][0]["sources"][1]["gain_db"] == "-inf"
    assert len(cfg.content_hash()) == 16
    assert cfg.content_hash() != parse_config(GOOD + "\n# edit\n").content_hash()


def test_missing_geometry_field_names_field_and_line():
    text = GOOD.replace('geometry = "g"\nseed = 3', "seed = 3")
    err = _error(text)
    assert "scenes[0].geometry" in str(err) and "missing" in str(err)
    assert err.line == 11 and str(err).startswith("line 11:")


def test_unknown_geometry():
    err = _error(GOOD.replace('name = "two"\ngeometry = "g"', 'name = "two"\ngeometry = "h"'))
    # anchored at the second [[scenes]] header
    assert "scenes[1].geometry: unknown geometry 'h'" in str(err) and err.line == 19


def test_geometry_missing_mics():
    err = _error(GOOD.replace("mics = [[0.02, 0.07, 0.02], [0.06, 0.07, 0.02]]\n", ""))
    assert "geometries.g.mics" in str(err) and err.line == 6


def test_bad_types_and_values():
    assert "scenes[0].sources[0].azimuth_deg" in str(_error(GOOD.replace("azimuth_deg = 30", 'azimuth_deg = "north"')))
    assert "scenes[0].room" in str(_error(GOOD.replace("rt60_s = 0.3", "rt60_s = -1")))
    assert "engine" in str(_error(GOOD.replace("num_taps = 512", "num_taps = 500")))
    assert "unknown field" in str(_error(GOOD.replace("block_size = 64", "block_size = 64\nblock = 3")))
    assert "sensor_noise_db" in str(_error(GOOD.replace("sensor_noise_db = -30", 'sensor_noise_db = "loud"')))
    assert "seed" in str(_error(GOOD.replace("seed = 3", "seed = true")))


def test_malformed_toml_reports_line():
    err = _error(GOOD.replace("num_taps = 512", "num_taps = = 512"))
    assert err.line == 4


def test_duplicate_scene_names():
    assert "unique" in str(_error(GOOD.replace('name = "two"', 'name = "one"')))


def test_unknown_scene_lookup():
    with pytest.raises(ConfigError):
        parse_config(GOOD).scene("three")


def test_load_config_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "nope.toml")
    p = tmp_path / "c.toml"
    p.write_text(GOOD)
    assert load_config(p).scenes[0].name == "one"


def test_standard_suite_shape():
    cfg = standard_suite()
    assert len(cfg.scenes) == 12
    assert len({s.geometry.digest() for s in cfg.scenes}) == 3
    assert {s.room.rt60_s for s in cfg.scenes} == {0.3, 0.6}
    assert {s.sources[0].noise for s in cfg.scenes} == {"pink", "bandlimited:80:2000"}
    assert all(s.geometry.side == "left" and s.geometry.num_mics == 4 for s in cfg.scenes)
    assert cfg.doa.num_angles == 36 and cfg.scene(cfg.doa.scene)
    # mics sit 3-9 cm from the ear
    for s in cfg.scenes:
        dist = np.linalg.norm(s.geometry.mic_positions - s.geometry.ear_position, axis=1)
        assert np.all((dist >= 0.025) & (dist <= 0.095))


def test_dumps_json_handles_numpy_and_infinities():
    out = json.loads(dumps_json({"a": np.float64(1.5), "b": np.arange(3), "c": -np.inf, "d": (np.nan,)}))
    assert out == {"a": 1.5, "b": [0, 1, 2], "c": "-inf", "d": ["nan"]}
