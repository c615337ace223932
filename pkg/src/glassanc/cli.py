"""Command-line entry point: ``glassanc {scene,sysid,run,sweep,bench}``.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical
failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, dumps_json, load_config, parse_config, bundled_config_text
from .dsp import Waveform, nmse_db
from .engine import EngineConfig, EngineError
from .filters import SingularSystemError, make_estimator
from .sysid import MeasurementError, estimate_feedback_paths, estimate_secondary_path, generate_ess

log = logging.getLogger("glassanc")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
GOLDEN_FILE = "golden.json"
GOLDEN_TOLERANCE_DB = 0.5


class UsageError(ValueError):
    pass


def _hash_files(paths) -> str:
    h = hashlib.sha256()
    for p in sorted(Path(x) for x in paths):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def _load_cfg(path) -> ExperimentConfig:
    if path is None:
        return parse_config(bundled_config_text())
    return load_config(path)


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# scene --------------------------------------------------------------------------


def cmd_scene(args) -> int:
    from .fileio import write_bundle

    cfg = _load_cfg(args.config)
    if not cfg.scenes:
        raise ConfigError("scenes: the config defines no scenes")
    specs = list(cfg.scenes) if args.all else [_pick_scene(cfg, args.scene)]
    out = Path(args.out)
    for spec in specs:
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
        scene = spec.render(cfg.engine.fs)
        target = out / spec.name if args.all else out
        write_bundle(target, scene, {"scene": spec.describe(), "config_hash": cfg.content_hash()})
        print(f"wrote {target}")
    return EXIT_OK


def _pick_scene(cfg: ExperimentConfig, key):
    if key is None:
        return cfg.scenes[0]
    if str(key).isdigit():
        i = int(key)
        if not 0 <= i < len(cfg.scenes):
            raise ConfigError(f"scene index {i} out of range (config has {len(cfg.scenes)})")
        return cfg.scenes[i]
    return cfg.scene(key)


# sysid --------------------------------------------------------------------------


def cmd_sysid(args) -> int:
    from .fileio import read_bundle, write_path

    scene = read_bundle(args.bundle)
    pair = generate_ess(args.f1, args.f2, args.sweep_seconds, scene.sample_rate_hz)
    out = Path(args.out)
    report = {"type": args.type, "bundle": str(args.bundle), "sweeps": args.sweeps,
              "noise_level_db": args.noise_db, "input_hash": _hash_files(Path(args.bundle).iterdir())}
    if args.type == "secondary":
        s = estimate_secondary_path(scene, pair, num_sweeps=args.sweeps, noise_level_db=args.noise_db,
                                    seed=args.seed)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_path(out, s)
        truth = scene.true_secondary.resized(len(s)).taps
        report["nmse_db"] = nmse_db(s.taps, truth)
        report["files"] = [str(out)]
    else:
        bank = estimate_feedback_paths(scene, pair, num_sweeps=args.sweeps, noise_level_db=args.noise_db,
                                       seed=args.seed)
        out.mkdir(parents=True, exist_ok=True)
        files = []
        for m, g in enumerate(bank):
            f = out / f"feedback_{m}.path"
            write_path(f, g)
            files.append(str(f))
        report["nmse_db"] = [nmse_db(g.taps, t.resized(len(g)).taps)
                             for g, t in zip(bank, scene.true_feedback)]
        report["files"] = files
    print(dumps_json(report, indent=2))
    return EXIT_OK


# run ----------------------------------------------------------------------------


def _golden_path() -> Path:
    return Path(str(resources.files("glassanc.data").joinpath(GOLDEN_FILE)))


def read_golden() -> dict:
    p = _golden_path()
    return json.loads(p.read_text()) if p.is_file() else {}


def cmd_run(args) -> int:
    from .evaluation import run_chunked_eval
    from .fileio import read_bundle, write_wav

    cfg = _load_cfg(args.config)
    engine = cfg.engine
    if args.taps is not None:
        engine = replace(engine, num_taps=args.taps)
    if args.latency is not None:
        engine = replace(engine, injected_latency_samples=args.latency)
    try:
        estimator = make_estimator(args.estimator)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    bundle = Path(args.scene)
    if bundle.is_dir():
        scene = read_bundle(bundle)
        spec_info = {"bundle": str(bundle)}
        input_hash = _hash_files(p for p in bundle.iterdir() if p.is_file())
        label = bundle.name
    else:
        spec = _pick_scene(cfg, args.scene)
        scene = spec.render(engine.fs)
        spec_info = spec.describe()
        input_hash = cfg.content_hash()
        label = spec.name
    rep = run_chunked_eval(scene, estimator, engine, cfg.protocol, args.mode, cfg.schedule, label=label)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_wav(out / "residual.wav", Waveform(rep.residual, scene.sample_rate_hz))
    _write(out / "log.jsonl", "".join(dumps_json(r) + "\n" for r in rep.log))
    report = {
        "command": "run",
        "scene": spec_info,
        "estimator": args.estimator,
        "mode": args.mode,
        "mean_db": rep.mean,
        "std_db": rep.std,
        "chunk_reductions_db": rep.chunk_reductions,
        "chunk_times_s": rep.chunk_times_s,
        "config": {**cfg.resolved(), "engine": asdict(engine)},
        "input_hash": input_hash,
        "version": __version__,
    }
    golden_key = f"{label}/{args.estimator}/{args.mode}/{engine.num_taps}"
    if args.bless:
        gold = read_golden()
        gold[golden_key] = {"mean_db": rep.mean}
        _write(_golden_path(), json.dumps(gold, indent=2, sort_keys=True) + "\n")
        report["golden"] = {"key": golden_key, "blessed": rep.mean}
    else:
        gold = read_golden().get(golden_key)
        if gold is not None:
            ok = abs(rep.mean - gold["mean_db"]) <= GOLDEN_TOLERANCE_DB
            report["golden"] = {"key": golden_key, "expected_db": gold["mean_db"], "within_tolerance": ok}
    _write(out / "report.json", dumps_json(report, indent=2) + "\n")
    print(f"{label}: mean reduction {rep.mean:.2f} dB over {len(rep.chunk_reductions)} chunks ({args.mode})")
    return EXIT_OK


# sweep --------------------------------------------------------------------------


def _parse_list(text, kind=int):
    if text is None:
        return None
    try:
        return [kind(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse list {text!r}") from None


def cmd_sweep(args) -> int:
    from . import evaluation as ev

    cfg = _load_cfg(args.config)
    specs = list(cfg.scenes)
    if not specs:
        raise ConfigError("scenes: the suite is empty")
    engine = cfg.engine if args.taps is None else replace(cfg.engine, num_taps=args.taps)
    values = _parse_list(args.values)
    common = dict(config=engine, protocol=cfg.protocol, mode=args.mode, workers=args.workers)
    if args.kind == "taps":
        res = ev.sweep_taps(specs, values or (512, 1024, 2048, 4096), **common)
    elif args.kind == "latency":
        res = ev.sweep_latency(specs, values or (1, 2, 4, 8, 16), **common)
    elif args.kind == "mics":
        res = ev.sweep_mics(specs, values or (1, 2, 3, 4), **common)
    elif args.kind == "sources":
        res = ev.sweep_sources(specs, values or (1, 2, 3), **common)
    else:
        spec = cfg.scene(cfg.doa.scene) if cfg.doa.scene else specs[0]
        if cfg.doa.num_taps:
            common["config"] = replace(engine, num_taps=cfg.doa.num_taps)
        res = ev.sweep_doa(spec, cfg.doa.num_angles if values is None else 36, angles=values, **common)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = json.loads(res.to_json())
    payload["config"] = cfg.resolved()
    payload["input_hash"] = cfg.content_hash()
    _write(out / f"{args.kind}.json", dumps_json(payload, indent=2) + "\n")
    _write(out / f"{args.kind}.csv", res.to_csv())
    if args.plot_data:
        if args.kind == "doa":
            text = _doa_plot_data(res)
        else:
            text = res.plot_data()
        _write(out / f"{args.kind}.dat", text)
    for row in res.summary():
        print(" ".join(f"{k}={v:.3f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    return EXIT_OK


def _doa_plot_data(res) -> str:
    from .evaluation import doa_profile

    sides = sorted({r.axis["side"] for r in res.reports})
    profiles = {s: doa_profile(res, s) for s in sides}
    angles = profiles[sides[0]][0]
    lines = ["# azimuth_deg " + " ".join(f"{s}_mean_db" for s in sides)]
    for i, a in enumerate(angles):
        lines.append(f"{a:g} " + " ".join(f"{profiles[s][1][i]:.6f}" for s in sides))
    return "\n".join(lines) + "\n"


# bench --------------------------------------------------------------------------


def bench_engine(num_taps: int, block: int, mics: int = 4, seconds: float = 1.0, repeats: int = 5,
                 seed: int = 0) -> dict:
    """Per-sample nanoseconds for the hybrid head, amortized tail and direct FIR."""
    from . import _kernels
    from .engine import HybridEngine
    from .filters import AncFilterSet

    fs = 22050
    rng = np.random.default_rng(seed)
    n = int(seconds * fs) // block * block
    x = rng.standard_normal((mics, n))
    w = AncFilterSet.from_taps(rng.standard_normal((mics, num_taps)) / num_taps, fs)
    cfg = EngineConfig(block_size=block, num_taps=num_taps, fs=fs)
    _kernels.warmup()
    head_ns, tail_ns, direct_ns = [], [], []
    for _ in range(repeats + 1):
        eng = HybridEngine(w, None, cfg)
        tail_time = 0.0
        complete = eng._complete_block

        def timed_complete():
            nonlocal tail_time
            t = time.perf_counter()
            complete()
            tail_time += time.perf_counter() - t

        eng._complete_block = timed_complete
        t0 = time.perf_counter()
        for i in range(0, n, block):
            eng.process_block(x[:, i : i + block])
        total = time.perf_counter() - t0
        out = np.empty(n)
        taps = np.ascontiguousarray(w.taps())
        t0 = time.perf_counter()
        _kernels.direct_fir_multichannel(x, taps, out)
        direct = time.perf_counter() - t0
        head_ns.append((total - tail_time) / n * 1e9)
        tail_ns.append(tail_time / n * 1e9)
        direct_ns.append(direct / n * 1e9)
    # the first pass absorbs compilation and cache warm-up
    head, tail, direct = (np.array(v[1:]) for v in (head_ns, tail_ns, direct_ns))
    hybrid = head + tail
    return {"num_taps": num_taps, "block_size": block, "num_mics": mics,
            "head_ns": float(head.mean()), "head_std_ns": float(head.std()),
            "tail_ns": float(tail.mean()), "tail_std_ns": float(tail.std()),
            "hybrid_ns": float(hybrid.mean()), "hybrid_std_ns": float(hybrid.std()),
            "direct_ns": float(direct.mean()), "direct_std_ns": float(direct.std()),
            "repeats": repeats}


def cmd_bench(args) -> int:
    taps = _parse_list(args.taps) or [256, 512, 1024, 2048, 4096]
    rows = [bench_engine(L, args.block, args.mics, args.seconds, args.repeats) for L in taps]
    hdr = f"{'taps':>6} {'head ns':>14} {'tail ns':>14} {'hybrid ns':>14} {'direct ns':>14}"
    print(hdr)
    for r in rows:
        print(f"{r['num_taps']:>6} "
              + " ".join(f"{r[k + '_ns']:>8.1f}±{r[k + '_std_ns']:<5.1f}" for k in ("head", "tail", "hybrid", "direct")))
    if args.out:
        _write(Path(args.out), dumps_json({"command": "bench", "rows": rows}, indent=2) + "\n")
    return EXIT_OK


# entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glassanc", description="Feedforward ANC simulation toolkit")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("scene", help="render a scene bundle from a config")
    s.add_argument("config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--scene", help="scene name or index (default: first)")
    s.add_argument("--all", action="store_true", help="render every scene into OUT/<name>")
    s.set_defaults(func=cmd_scene)

    s = sub.add_parser("sysid", help="measure speaker paths of a bundle with sine sweeps")
    s.add_argument("bundle")
    s.add_argument("--type", choices=("secondary", "feedback"), required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--sweeps", type=int, default=2)
    s.add_argument("--noise-db", type=float, help="measurement noise relative to the recording")
    s.add_argument("--sweep-seconds", type=float, default=20.0)
    s.add_argument("--f1", type=float, default=20.0)
    s.add_argument("--f2", type=float, default=11025.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_sysid)

    s = sub.add_parser("run", help="evaluate an estimator on one scene")
    s.add_argument("scene", help="bundle directory, or scene name/index in the config")
    s.add_argument("--estimator", default="wiener-oracle")
    s.add_argument("--config", help="experiment config (default: bundled standard suite)")
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=("closed-loop", "offline"), default="closed-loop")
    s.add_argument("--taps", type=int)
    s.add_argument("--latency", type=int)
    s.add_argument("--bless", action="store_true", help="record this result as the golden value")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a sweep experiment over the suite")
    s.add_argument("kind", choices=("taps", "latency", "doa", "mics", "sources"))
    s.add_argument("--config", help="suite config (default: bundled standard suite)")
    s.add_argument("--out", required=True)
    s.add_argument("--values", help="comma-separated axis values")
    s.add_argument("--taps", type=int)
    s.add_argument("--mode", choices=("offline", "closed-loop"), default="offline")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--plot-data", action="store_true", help="also write gnuplot columns")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("bench", help="time hybrid versus direct convolution")
    s.add_argument("--taps", default="256,512,1024,2048,4096")
    s.add_argument("--block", type=int, default=128)
    s.add_argument("--mics", type=int, default=4)
    s.add_argument("--seconds", type=float, default=1.0)
    s.add_argument("--repeats", type=int, default=5)
    s.add_argument("--out")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, EngineError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SingularSystemError, MeasurementError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
