import json

import numpy as np
import pytest

from glassanc.cli import GOLDEN_TOLERANCE_DB, bench_engine, main, read_golden
from glassanc.dsp import nmse_db
from glassanc.fileio import read_bundle, read_path, read_wav

SMALL = """
[engine]
num_taps = 256

[doa]
scene = "s0"
num_angles = 4

[geometries.g]
mics = [[-0.03, 0.072, 0.02], [0.02, 0.073, 0.025], [0.06, 0.071, 0.02]]
speaker = [0.02, 0.075, -0.005]
ear = [0.0, 0.075, 0.0]

[[scenes]]
name = "s0"
geometry = "g"
seed = 1
sensor_noise_db = -30
room = {kind = "reverberant", rt60_s = 0.3, path_length_taps = 2048}
sources = [{azimuth_deg = 30, noise = "pink"}]

[[scenes]]
name = "s1"
geometry = "g"
seed = 2
sensor_noise_db = -30
room = {kind = "anechoic", path_length_taps = 512}
sources = [{azimuth_deg = 120, noise = "bandlimited:80:2000"}]
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "small.toml"
    p.write_text(SMALL)
    return p


@pytest.fixture
def bundle(tmp_path, cfg):
    out = tmp_path / "bundle"
    assert main(["scene", str(cfg), "--out", str(out)]) == 0
    return out


# scene -------------------------------------------------------------------------


def test_scene_writes_bundle(bundle):
    scene = read_bundle(bundle)
    assert scene.num_mics == 3 and len(scene) == int(4.5 * 22050)
    meta = json.loads((bundle / "scene.json").read_text())
    assert meta["scene"]["name"] == "s0" and len(meta["config_hash"]) == 16


def test_scene_is_byte_identical_for_same_seed(tmp_path, cfg):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["scene", str(cfg), "--out", str(a), "--seed", "7"]) == 0
    assert main(["scene", str(cfg), "--out", str(b), "--seed", "7"]) == 0
    for f in sorted(p.name for p in a.iterdir()):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_scene_all(tmp_path, cfg):
    assert main(["scene", str(cfg), "--out", str(tmp_path / "all"), "--all"]) == 0
    assert sorted(p.name for p in (tmp_path / "all").iterdir()) == ["s0", "s1"]


def test_scene_config_error_names_field(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text(SMALL.replace('geometry = "g"\nseed = 1', "seed = 1"))
    assert main(["scene", str(p), "--out", str(tmp_path / "x")]) == 2
    err = capsys.readouterr().err
    assert "scenes[0].geometry" in err and "line" in err


def test_scene_missing_config_is_io_error(tmp_path):
    assert main(["scene", str(tmp_path / "none.toml"), "--out", str(tmp_path / "x")]) == 4


# sysid -------------------------------------------------------------------------


def test_sysid_secondary(tmp_path, bundle, capsys):
    out = tmp_path / "s.path"
    assert main(["sysid", str(bundle), "--type", "secondary", "--out", str(out), "--sweep-seconds", "2"]) == 0
    s = read_path(out)
    assert len(s.taps) == 1024
    truth = read_bundle(bundle).true_secondary.resized(1024).taps
    assert nmse_db(s.taps, truth) <= -50
    assert json.loads(capsys.readouterr().out)["nmse_db"] <= -50


def test_sysid_feedback_writes_one_file_per_mic(tmp_path, bundle):
    out = tmp_path / "fb"
    assert main(["sysid", str(bundle), "--type", "feedback", "--out", str(out), "--sweep-seconds", "2"]) == 0
    files = sorted(p.name for p in out.iterdir())
    assert files == ["feedback_0.path", "feedback_1.path", "feedback_2.path"]
    assert all(len(read_path(out / f).taps) == 256 for f in files)


def test_sysid_corrupt_bundle(tmp_path, bundle):
    (bundle / "secondary.path").write_bytes(b"garbage")
    assert main(["sysid", str(bundle), "--type", "secondary", "--out", str(tmp_path / "s.path")]) == 4


# run ---------------------------------------------------------------------------


def test_run_zero_estimator(tmp_path, cfg):
    out = tmp_path / "run"
    assert main(["run", "s0", "--config", str(cfg), "--estimator", "zero", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["mean_db"] == 0.0 and rep["mode"] == "closed-loop"
    assert rep["config"]["engine"]["num_taps"] == 256 and len(rep["input_hash"]) == 16
    log = [json.loads(l) for l in (out / "log.jsonl").read_text().splitlines()]
    assert any(r["event"] == "filter_update" for r in log) and any(r["event"] == "chunk" for r in log)
    res = read_wav(out / "residual.wav")
    assert res.samples.shape == (1, int(4.5 * 22050))


def test_run_offline_on_bundle(tmp_path, bundle, cfg):
    out = tmp_path / "run"
    assert main(["run", str(bundle), "--config", str(cfg), "--mode", "offline", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["mode"] == "offline" and len(rep["chunk_reductions_db"]) == 4 and rep["mean_db"] > 0


def test_run_unknown_estimator_is_usage_error(tmp_path, cfg, capsys):
    assert main(["run", "s0", "--config", str(cfg), "--estimator", "neural", "--out", str(tmp_path / "r")]) == 2
    assert "unknown estimator" in capsys.readouterr().err


def test_run_bad_taps_is_config_error(tmp_path, cfg):
    assert main(["run", "s0", "--config", str(cfg), "--taps", "300", "--out", str(tmp_path / "r")]) == 2


def test_run_matches_golden(tmp_path):
    gold = read_golden()
    key = "frame_a-rt03-pink/wiener-oracle/closed-loop/1024"
    assert key in gold
    out = tmp_path / "g"
    assert main(["run", "0", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["golden"]["key"] == key and rep["golden"]["within_tolerance"]
    assert abs(rep["mean_db"] - gold[key]["mean_db"]) <= GOLDEN_TOLERANCE_DB


# sweep -------------------------------------------------------------------------


def test_sweep_latency(tmp_path, cfg):
    out = tmp_path / "sw"
    assert main(["sweep", "latency", "--config", str(cfg), "--out", str(out), "--plot-data"]) == 0
    data = json.loads((out / "latency.json").read_text())
    means = [row["mean_db"] for row in data["summary"]]
    assert len(means) == 5
    assert all(b <= a + 0.3 for a, b in zip(means, means[1:])) and means[-1] < means[0]
    assert (out / "latency.csv").read_text().count("\n") == 1 + 5 * 2 * 4
    assert (out / "latency.dat").is_file()


def test_sweep_doa_rows(tmp_path, cfg):
    out = tmp_path / "doa"
    assert main(["sweep", "doa", "--config", str(cfg), "--out", str(out), "--plot-data"]) == 0
    data = json.loads((out / "doa.json").read_text())
    assert len(data["reports"]) == 8  # 4 angles x 2 sides
    dat = (out / "doa.dat").read_text().splitlines()
    assert dat[0].split()[-2:] == ["left_mean_db", "right_mean_db"] and len(dat) == 5


def test_sweep_empty_suite(tmp_path):
    p = tmp_path / "empty.toml"
    p.write_text("[engine]\nnum_taps = 256\n")
    assert main(["sweep", "taps", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_sweep_bad_values(tmp_path, cfg):
    assert main(["sweep", "taps", "--config", str(cfg), "--values", "a,b", "--out", str(tmp_path / "o")]) == 2


# bench -------------------------------------------------------------------------


def test_bench_reports_all_columns(tmp_path, capsys):
    out = tmp_path / "bench.json"
    assert main(["bench", "--taps", "256,512", "--seconds", "0.2", "--repeats", "2", "--out", str(out)]) == 0
    rows = json.loads(out.read_text())["rows"]
    assert [r["num_taps"] for r in rows] == [256, 512]
    for r in rows:
        for k in ("head", "tail", "hybrid", "direct"):
            assert r[f"{k}_ns"] >= 0 and r[f"{k}_std_ns"] >= 0
    assert "hybrid ns" in capsys.readouterr().out


def test_bench_engine_small_filter_has_no_tail():
    r = bench_engine(256, 128, mics=1, seconds=0.1, repeats=1)
    assert r["tail_ns"] < r["head_ns"]
    assert np.isfinite(r["direct_ns"])


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
