"""Command-line pipeline.

Subcommands are thin wrappers over the library modules: ``simulate``,
``sketch``, ``characterize``, ``synth``, ``augment``, ``reconstruct``,
``pairs``, ``bench``, ``bandwidth``, ``demo-stream``.  Exit codes: 0
success, 2 config error, 3 format error, 4 consistency violation.
"""

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import characterize, formats, pipeline, recon, synth
from .errors import ConfigError, ConsistencyError, FormatError
from .formats import PipelineConfig, build_ladder, parse_config
from .recon import LossConfig, ToneMapConfig, mu_law, paper_loss
from .sensor import HotPixelMask, SensorConfig, simulate_bitplane
from .sketch import ExposureStack, Sketch, quantize_u8


def _load_config(args) -> PipelineConfig:
    cfg = parse_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, seed=args.seed))
    return cfg


def _out_dir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def build_sensor(section, shape, seed: int) -> SensorConfig:
    """Sensor config from a parsed section, with a seeded hot-pixel mask."""
    mask = None
    if section.hot_fraction > 0.0:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(777,)))
        flags = rng.random(shape) < section.hot_fraction
        mask = HotPixelMask(flags)
    return SensorConfig(
        pdp=section.pdp,
        dark_rate=section.dark_rate,
        frame_rate=section.frame_rate,
        hot_pixel_mask=mask,
        hot_dark_factor=section.hot_dark_factor,
    )


def _emit(record: dict) -> None:
    print(json.dumps(record))


def _stack_from_file(sf: formats.StackFile) -> ExposureStack:
    if sf.dtype == "u8":
        return ExposureStack(sf.timestamp, sf.windows, sf.planes)
    raw = sf.planes.astype(np.float64)
    return ExposureStack(sf.timestamp, sf.windows, quantize_u8(np.clip(raw, 0.0, 1.0)), raw)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    seed = cfg.run.seed
    scene = synth.scene_from_config(cfg.scene, cfg.run.frames, cfg.sensor.frame_rate, seed)
    transform = synth.flux_transform_from_config(cfg.run, cfg.sensor.frame_rate, seed)
    sensor = build_sensor(cfg.sensor, scene.shape, seed)

    def planes():
        for t in range(cfg.run.frames):
            flux = transform(synth.render_frame(scene, t))
            yield simulate_bitplane(flux, sensor, seed, t)

    path = os.path.join(out, "bitplanes.qsb")
    header = formats.write_bitplanes(path, planes(), sensor.frame_rate)
    _emit({"path": path, "frames": header.frame_count,
           "width": header.width, "height": header.height,
           "frame_rate_hz": header.frame_rate_hz, "seed": seed})
    return 0


def cmd_sketch(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    ladder = build_ladder(cfg.ladder)
    header = formats.read_bitplane_header(args.input)
    sketch = Sketch(ladder, header.width, header.height)
    stride = args.stride
    written = []
    for plane in formats.read_bitplanes(args.input):
        sketch.update(plane)
        if stride and sketch.t % stride == 0:
            path = os.path.join(out, f"stack_t{sketch.t:06d}.qsx")
            formats.write_stack(path, sketch.poll(include_raw=True), dtype=args.dtype)
            written.append(path)
    if not written or (stride and sketch.t % stride != 0) or not stride:
        path = os.path.join(out, f"stack_t{sketch.t:06d}.qsx")
        formats.write_stack(path, sketch.poll(include_raw=True), dtype=args.dtype)
        written.append(path)
    _emit({"frames": sketch.t, "stacks": written,
           "flops_per_pixel_per_frame": sketch.op_counter / (sketch.pixels * max(sketch.t, 1))})
    return 0


def cmd_characterize(args) -> int:
    _load_config(args)   # nothing consumed, but a supplied config must be valid
    out = _out_dir(args)
    bounds = (args.bounds[0], args.bounds[1])
    grid = np.geomspace(bounds[0], bounds[1], args.grid_points)
    points = characterize.response_curve(grid, args.frames)
    csv_path = os.path.join(out, "response_curve.csv")
    characterize.write_response_csv(csv_path, points)
    dr = characterize.dynamic_range(args.frames, args.threshold_db, bounds, args.grid_points)
    record = {
        "n_frames": dr.n_frames,
        "threshold_db": dr.snr_threshold_db,
        "lambda_lo": dr.lam_lo,
        "lambda_hi": dr.lam_hi,
        "csv": csv_path,
    }
    with open(os.path.join(out, "dynamic_range.json"), "w") as fh:
        json.dump(record, fh, indent=2)
    _emit(record)
    return 0


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    seed = cfg.run.seed
    scene = synth.scene_from_config(cfg.scene, cfg.run.frames, cfg.sensor.frame_rate, seed)
    transform = synth.flux_transform_from_config(cfg.run, cfg.sensor.frame_rate, seed)
    written = []
    for t in range(cfg.run.stride - 1, cfg.run.frames, cfg.run.stride):
        flux = transform(synth.render_frame(scene, t))
        base = os.path.join(out, f"flux_t{t + 1:06d}")
        formats.write_flux(base + ".qsx", flux.data, timestamp=t + 1)
        peak = float(flux.data.max())
        formats.write_pgm(base + ".pgm", flux.data, peak=peak if peak > 0 else 1.0)
        written.append(base + ".qsx")
    _emit({"frames": cfg.run.frames, "stride": cfg.run.stride, "files": written, "seed": seed})
    return 0


def cmd_augment(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    seed = cfg.run.seed
    if args.input:
        data, t = formats.read_flux(args.input)
        frame = synth.FluxFrame(data)
    else:
        scene = synth.scene_from_config(cfg.scene, 1, cfg.sensor.frame_rate, seed)
        frame, t = synth.render_frame(scene, 0), 0
    hdr = cfg.run.hdr if cfg.run.hdr is not None else formats.HdrSection()
    rng = np.random.default_rng(seed)
    sampled = synth.HdrAugmentConfig.sample(rng, hdr.threshold)
    hdr_cfg = synth.HdrAugmentConfig(
        hdr.lam_low if hdr.lam_low is not None else sampled.lam_low,
        hdr.lam_high if hdr.lam_high is not None else sampled.lam_high,
        hdr.threshold,
    )
    augmented = synth.hdr_augment(frame, hdr_cfg)
    path = os.path.join(out, "flux_hdr.qsx")
    formats.write_flux(path, augmented.data, timestamp=t)
    _emit({"path": path, "lam_low": hdr_cfg.lam_low, "lam_high": hdr_cfg.lam_high,
           "threshold": hdr_cfg.threshold, "input_max": float(frame.data.max()),
           "output_max": float(augmented.data.max()), "seed": seed})
    return 0


def cmd_reconstruct(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    sf = formats.read_stack(args.input)
    stack = _stack_from_file(sf)
    dark = cfg.sensor.dark_rate / cfg.sensor.frame_rate
    values = stack.values()
    naive = recon.naive_integration(values[0], n_effective=stack.windows[0], dark_per_frame=dark)
    fused = recon.fuse_longest_unsaturated(stack, args.sat_threshold, dark_per_frame=dark)
    tone = ToneMapConfig()
    domain = "linear" if args.linear else "tone"
    results = {}
    for name, est in (("naive", naive), ("fused", fused)):
        img = mu_law(est.lambda_hat, tone) if domain == "tone" else est.lambda_hat
        peak = float(img.max())
        formats.write_pgm(os.path.join(out, f"recon_{name}.pgm"), img,
                          peak=peak if peak > 0 else 1.0)
        results[name] = {"saturated_pixels": int(np.count_nonzero(est.saturated_mask))}
    if args.gt:
        gt, _ = formats.read_flux(args.gt)
        for name, est in (("naive", naive), ("fused", fused)):
            rec = recon.metrics_record(est.lambda_hat, gt, est.n_frames_used, domain=domain)
            rec["method"] = name
            results[name].update(rec)
            _emit(rec)
    with open(os.path.join(out, "metrics.json"), "w") as fh:
        json.dump(results, fh, indent=2)
    return 0


def make_parity_block(tone: ToneMapConfig, loss: LossConfig, seed: int,
                      grid_points: int = 1000, n_cases: int = 100, case_side: int = 8) -> dict:
    """Reference values for cross-language tone-map and loss parity tests."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(4242,)))
    grid = np.concatenate([
        np.linspace(-0.5, 0.0, grid_points // 5, endpoint=False),
        np.geomspace(1e-6, 10.0, grid_points - grid_points // 5),
    ])
    cases = []
    for _ in range(n_cases):
        a = rng.uniform(0.0, 10.0, size=(case_side, case_side))
        b = np.maximum(a + rng.normal(0.0, 0.5, size=a.shape), 0.0)
        cases.append({
            "a": a.tolist(),
            "b": b.tolist(),
            "loss": paper_loss(a, b, loss, tone),
        })
    return {
        "tone": {"mu": tone.mu, "zeta": tone.zeta,
                 "inputs": grid.tolist(), "outputs": mu_law(grid, tone).tolist()},
        "loss": {"sigma": loss.sigma, "cases": cases},
    }


def cmd_pairs(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    base_seed = cfg.run.seed
    ladder = build_ladder(cfg.ladder)
    tone, loss = ToneMapConfig(), LossConfig()
    pair_entries = []
    for i in range(args.scenes):
        seed = base_seed + 1009 * i
        scene_cfg = cfg.scene
        if args.scenes > 1:
            # vary texture across scenes so held-out evaluation sees new content
            kind = scene_cfg.kind
            if kind in ("checkerboard", "radial"):
                kind = ("checkerboard", "radial")[i % 2]
            scene_cfg = dataclasses.replace(
                scene_cfg, kind=kind, period=scene_cfg.period + 4 * (i % 4)
            )
        scene = synth.scene_from_config(scene_cfg, cfg.run.frames, cfg.sensor.frame_rate, seed)
        transform = synth.flux_transform_from_config(cfg.run, cfg.sensor.frame_rate, seed)
        sensor = build_sensor(cfg.sensor, scene.shape, seed)
        pairs = synth.make_training_pair(
            scene, sensor, ladder, cfg.run.stride, seed,
            flux_transform=transform, hot_fill=cfg.sensor.hot_fill,
        )
        for stack, gt in pairs:
            stem = f"pair_s{i:03d}_t{stack.timestamp:06d}"
            stack_path = os.path.join(out, stem + ".stack.qsx")
            gt_path = os.path.join(out, stem + ".gt.qsx")
            formats.write_stack(stack_path, stack, dtype=args.dtype)
            formats.write_flux(gt_path, gt.data, timestamp=stack.timestamp)
            pair_entries.append({
                "stack": os.path.basename(stack_path),
                "gt": os.path.basename(gt_path),
                "scene": i,
                "t": stack.timestamp,
                "speed_px_per_frame": scene.trajectory.speed / cfg.sensor.frame_rate,
            })
    manifest = {
        "version": formats.FORMAT_VERSION,
        "width": cfg.scene.width,
        "height": cfg.scene.height,
        "channels": ladder.channels,
        "windows": list(ladder.windows),
        "stride": cfg.run.stride,
        "stack_dtype": args.dtype,
        "tone": {"mu": tone.mu, "zeta": tone.zeta},
        "loss": {"sigma": loss.sigma},
        "sensor": {"pdp": cfg.sensor.pdp, "dark_rate": cfg.sensor.dark_rate,
                   "frame_rate": cfg.sensor.frame_rate,
                   "dark_per_frame": cfg.sensor.dark_rate / cfg.sensor.frame_rate},
        "pairs": pair_entries,
        "parity": make_parity_block(tone, loss, base_seed),
    }
    manifest_path = os.path.join(out, "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh)
    _emit({"manifest": manifest_path, "pairs": len(pair_entries), "scenes": args.scenes})
    return 0


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    ladder = build_ladder(cfg.ladder)
    result = pipeline.bench_update(args.width, args.height, args.frames, ladder)
    _emit(dataclasses.asdict(result))
    return 0


def cmd_bandwidth(args) -> int:
    _load_config(args)   # nothing consumed, but a supplied config must be valid
    report = pipeline.bandwidth_report(
        args.sensor_fps, args.poll_fps, args.channels, args.bits, args.window
    )
    record = dataclasses.asdict(report)
    record["memory_reduction_ratio"] = report.memory_reduction_ratio
    _emit(record)
    return 0


def cmd_demo_stream(args) -> int:
    cfg = _load_config(args)
    stream = cfg.stream
    frames = args.frames if args.frames is not None else stream.frames
    ladder = build_ladder(cfg.ladder)
    result = pipeline.run_stream_demo(
        width=stream.width, height=stream.height, ladder=ladder,
        sensor_fps=stream.fps, poll_rates=stream.poll_rates,
        n_frames=frames, seed=cfg.run.seed,
    )
    for st in result.pollers:
        _emit({"poller_hz": st.rate_hz, "polls": st.polls, "violations": st.violations,
               "staleness_p50_frames": st.staleness_p50,
               "staleness_p99_frames": st.staleness_p99,
               "staleness_max_frames": st.staleness_max})
    _emit({"frames": result.frames, "wall_seconds": result.wall_seconds,
           "effective_fps": result.effective_fps,
           "total_violations": result.total_violations})
    if not result.ok:
        print("snapshot consistency violated", file=sys.stderr)
        return 4
    return 0


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="pipeline config JSON")
    sub.add_argument("--seed", type=int, help="override run.seed")
    sub.add_argument("--out", default="out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quantastream",
        description="Streaming quanta-sensor simulation, sketching, and characterization",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("simulate", help="simulate a binary frame stream from a scene")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = subs.add_parser("sketch", help="stream a bitplane file into exposure stacks")
    _add_common(p)
    p.add_argument("--input", required=True, help="QSB1 bitplane stream")
    p.add_argument("--stride", type=int, default=0, help="emit a stack every N frames")
    p.add_argument("--dtype", choices=("u8", "f32"), default="u8")
    p.set_defaults(func=cmd_sketch)

    p = subs.add_parser("characterize", help="SNR curve and dynamic-range endpoints")
    _add_common(p)
    p.add_argument("--frames", type=int, required=True, help="bit budget N")
    p.add_argument("--threshold-db", type=float, default=20.0)
    p.add_argument("--bounds", type=float, nargs=2, default=(1e-3, 1e2))
    p.add_argument("--grid-points", type=int, default=200)
    p.set_defaults(func=cmd_characterize)

    p = subs.add_parser("synth", help="render clean flux frames from a scene")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("augment", help="apply the two-segment HDR flux transfer")
    _add_common(p)
    p.add_argument("--input", help="flux .qsx file (default: scene frame 0)")
    p.set_defaults(func=cmd_augment)

    p = subs.add_parser("reconstruct", help="classical reconstructions from a stack")
    _add_common(p)
    p.add_argument("--input", required=True, help="QSX1 stack file")
    p.add_argument("--gt", help="ground-truth flux .qsx for metrics")
    p.add_argument("--linear", action="store_true", help="metrics in linear flux domain")
    p.add_argument("--sat-threshold", type=float, default=0.95)
    p.set_defaults(func=cmd_reconstruct)

    p = subs.add_parser("pairs", help="export training pairs for the reconstructor")
    _add_common(p)
    p.add_argument("--scenes", type=int, default=1)
    p.add_argument("--dtype", choices=("u8", "f32"), default="u8")
    p.set_defaults(func=cmd_pairs)

    p = subs.add_parser("bench", help="update/poll throughput benchmark")
    _add_common(p)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--frames", type=int, default=10_000)
    p.set_defaults(func=cmd_bench)

    p = subs.add_parser("bandwidth", help="raw-vs-sketch bandwidth accounting")
    _add_common(p)
    p.add_argument("--sensor-fps", type=float, default=100_000.0)
    p.add_argument("--poll-fps", type=float, default=30.0)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--bits", type=int, default=8)
    p.add_argument("--window", type=int, default=4096)
    p.set_defaults(func=cmd_bandwidth)

    p = subs.add_parser("demo-stream", help="producer/poller snapshot-consistency demo")
    _add_common(p)
    p.add_argument("--frames", type=int, help="override stream.frames")
    p.set_defaults(func=cmd_demo_stream)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 3
    except ConsistencyError as exc:
        print(f"consistency violation: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
