"""Command-line front end.

Result data (metrics, calibration summaries) goes to stdout; a one-line
JSON run report goes to stderr. Exit codes: 0 success, 2 input or contract
error, 3 numerical or degenerate-geometry error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import array_calib, dataset, depth, dsp, geometry, sim
from .core import RadarConfig
from .errors import InputError, NumericalError, RadarFuseError

EXIT_INPUT = 2
EXIT_NUMERICAL = 3


class Report:
    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.started = time.perf_counter()
        self.data = {
            "command": command,
            "inputs": [],
            "params": {k: v for k, v in vars(args).items() if k not in ("func",) and not callable(v)},
            "frames": [],
            "outputs": [],
        }

    def input(self, path):
        self.data["inputs"].append(str(path))

    def output(self, path):
        self.data["outputs"].append(str(path))

    def frame(self, **counts):
        self.data["frames"].append(counts)

    def emit(self):
        self.data["wall_ms"] = round((time.perf_counter() - self.started) * 1000.0, 3)
        print(json.dumps(self.data, default=str), file=sys.stderr)


def _load_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def _config(path) -> RadarConfig:
    return RadarConfig() if path is None else RadarConfig.from_dict(_load_json(path))


def _seed(value) -> int:
    if value is not None:
        return value
    env = os.environ.get("RADARFUSE_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise InputError(f"RADARFUSE_SEED must be an integer, got {env!r}") from None


def _map_frames(fn, items, jobs: int):
    """Apply ``fn`` to every item; results come back in input order whatever ``jobs`` is."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def cmd_simulate(args, report: Report):
    config = _config(args.config)
    targets = sim.read_targets(args.targets)
    report.input(args.targets)
    if args.config:
        report.input(args.config)
    seed = _seed(args.seed)
    noise = args.noise
    if args.snr_db is not None:
        noise = sim.noise_std_for_snr(config, args.snr_db)
    sim.validate_targets(config, targets)
    out = Path(args.out)
    if args.frames == 1:
        paths = [out]
    else:
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{i:06d}.cube" for i in range(args.frames)]

    def work(i):
        cube = sim.synthesize_adc_cube(config, targets, noise, seed=seed + i)
        dataset.write_cube(cube, paths[i])
        return i

    for i in _map_frames(work, list(range(args.frames)), args.jobs):
        report.frame(frame=i, seed=seed + i, targets=len(targets))
        report.output(paths[i])


def cmd_process(args, report: Report):
    config = _config(args.config)
    cfar = dsp.CfarParams(args.guard, args.train, args.pfa)
    cubes = [Path(p) for p in args.cubes]
    out = Path(args.out)
    multi = len(cubes) > 1
    if multi:
        out.mkdir(parents=True, exist_ok=True)
        if args.rdmap:
            Path(args.rdmap).mkdir(parents=True, exist_ok=True)

    def work(path):
        cube = dataset.read_cube(path)
        cloud, rdm = dsp.cube_to_pointcloud(cube, config, cfar, window=args.window, return_map=True)
        pc_path = out / (path.stem + ".csv") if multi else out
        dsp.write_pointcloud(pc_path, cloud)
        written = [pc_path]
        if args.rdmap:
            rd_path = Path(args.rdmap) / (path.stem + ".pgm") if multi else Path(args.rdmap)
            dsp.write_rdmap_pgm(rd_path, rdm)
            written.append(rd_path)
        return path, len(cloud), written

    for path, count, written in _map_frames(work, cubes, args.jobs):
        report.input(path)
        report.frame(input=str(path), detections=count)
        for w in written:
            report.output(w)


def cmd_calibrate_channels(args, report: Report):
    config = _config(args.config)
    cube = dataset.read_cube(args.corner)
    report.input(args.corner)
    if args.params:
        params = array_calib.ChannelCalibParams.from_dict(_load_json(args.params))
        report.input(args.params)
    else:
        params = array_calib.ChannelCalibParams.for_config(config, args.interp)
    calib = array_calib.calibrate_channels(cube, params)
    calib.save(args.out)
    report.output(args.out)
    residual = array_calib.peak_phase_spread(array_calib.apply_channel_calibration(cube, calib))
    report.frame(channels=int(calib.peak_index_deltas.size), residual_phase_spread_rad=residual)


def cmd_calibrate_extrinsics(args, report: Report):
    pairs = geometry.read_pairs(args.pairs)
    report.input(args.pairs)
    transform, rms = geometry.estimate_rigid_transform(pairs)
    geometry.save_extrinsics(args.out, radar_to_ir=transform, rms_residual=rms, num_pairs=len(pairs))
    report.output(args.out)
    report.frame(pairs=len(pairs))
    print(json.dumps({"rms_residual": rms, "num_pairs": len(pairs)}))


def cmd_eval_depth(args, report: Report):
    pred = dataset.read_depth(args.pred)
    gt = dataset.read_depth(args.gt)
    report.input(args.pred)
    report.input(args.gt)
    metrics = depth.depth_metrics(pred, gt)
    report.frame(valid=metrics.valid_count)
    print(json.dumps(metrics.to_dict()))


def cmd_denoise(args, report: Report):
    img = dataset.read_depth(args.input)
    report.input(args.input)
    out = depth.denoise_depth(img, args.close, args.open)
    dataset.write_depth(out, args.out)
    report.output(args.out)
    report.frame(valid_before=int(img.valid.sum()), valid_after=int(out.valid.sum()))


def cmd_project(args, report: Report):
    rows = dsp.read_pointcloud(args.pointcloud)
    calib = geometry.load_calibration_document(args.calib)
    intr_doc = geometry.load_calibration_document(args.intrinsics)
    for p in (args.pointcloud, args.calib, args.intrinsics):
        report.input(p)
    radar_to_ir = geometry.transform_from_document(calib, "radar_to_ir")
    key = next((k for k in ("ir", "intrinsics") if k in intr_doc), None)
    intrinsics = geometry.intrinsics_from_document(intr_doc, key)
    points = [np.array([r["x_m"], r["y_m"], r["z_m"]]) for r in rows]
    img, dropped = geometry.radar_to_sparse_depth(points, radar_to_ir, intrinsics)
    dataset.write_depth(img, args.out)
    report.output(args.out)
    report.frame(detections=len(points), dropped=dropped, projected=int(img.valid.sum()))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radarfuse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize ADC cubes from a targets CSV")
    p.add_argument("--config", help="radar config JSON (defaults to the built-in cascade config)")
    p.add_argument("--targets", required=True)
    p.add_argument("--out", required=True, help="cube file, or a directory when --frames > 1")
    p.add_argument("--seed", type=int, default=None, help="defaults to $RADARFUSE_SEED, then 0")
    noise = p.add_mutually_exclusive_group()
    noise.add_argument("--noise", type=float, default=0.0, help="per-sample complex noise std")
    noise.add_argument("--snr-db", type=float, default=None, help="range-Doppler cell SNR of a unit target")
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("process", help="run the detection chain and write point clouds")
    p.add_argument("cubes", nargs="+")
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="point cloud CSV, or a directory for several cubes")
    p.add_argument("--rdmap", help="optional range-Doppler PGM output (directory for several cubes)")
    p.add_argument("--pfa", type=float, default=1e-4)
    p.add_argument("--guard", type=int, default=2)
    p.add_argument("--train", type=int, default=4)
    p.add_argument("--window", choices=["hann"], default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_process)

    p = sub.add_parser("calibrate-channels", help="channel frequency/phase calibration from a corner scene")
    p.add_argument("--corner", required=True)
    p.add_argument("--params", help="calibration params JSON")
    p.add_argument("--config")
    p.add_argument("--interp", type=float, default=4.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate_channels)

    p = sub.add_parser("calibrate-extrinsics", help="radar-to-IR rigid transform from correspondences")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate_extrinsics)

    p = sub.add_parser("eval-depth", help="RMSE/MAE/iRMSE/iMAE of a depth PNG against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_eval_depth)

    p = sub.add_parser("denoise", help="morphological closing then opening of a depth PNG")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--close", type=int, default=3)
    p.add_argument("--open", type=int, default=3)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("project", help="rasterise a radar point cloud into the IR camera")
    p.add_argument("--pointcloud", required=True)
    p.add_argument("--calib", required=True, help="JSON with a radar_to_ir transform")
    p.add_argument("--intrinsics", required=True, help="IR intrinsics JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_project)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    report = Report(args.command, args)
    try:
        args.func(args, report)
    except NumericalError as exc:
        print(f"radarfuse {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (RadarFuseError, OSError) as exc:
        print(f"radarfuse {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    report.emit()
    return 0


if __name__ == "__main__":
    sys.exit(main())
