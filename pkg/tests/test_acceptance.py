"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test calls ``criterion(n, passed, detail)``, which prints a PASS/FAIL
line and fails the test when the criterion is not met. The terminal summary
repeats the twelve lines in order.
"""

import contextlib
import io
import itertools
import math
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from radarfuse import cli
from radarfuse.array_calib import (ChannelCalibParams, ChannelCalibration, apply_channel_calibration,
                                   calibrate_channels, peak_phase_spread)
from radarfuse.core import AdcCube, Domain, RadarConfig, derive_resolutions
from radarfuse.dataset import (cube_file_size, parse_timestamps, read_cube, read_depth, write_cube,
                               write_depth, write_timestamps)
from radarfuse.depth import (DepthImage, binary_closing, binary_opening, depth_metrics, silog_loss, ssi_loss,
                             top_loss_mask, total_loss)
from radarfuse.dsp import (CfarParams, cfar_detect, cube_to_pointcloud, doppler_fft, range_fft, rd_map,
                           read_pointcloud)
from radarfuse.errors import ParseError
from radarfuse.geometry import (RADAR_TO_CAMERA_AXES, CameraIntrinsics, CorrespondencePair, RigidTransform,
                                ViewExtrinsics, compose, estimate_rigid_transform, joint_extrinsics,
                                load_calibration_document, rotation_distance, save_extrinsics,
                                transform_from_document, transform_points, write_pairs)
from radarfuse.sim import (ChannelErrorProfile, PointTarget, make_corner_reflector_scene, noise_std_for_snr,
                           synthesize_adc_cube, write_targets)

import depth_cases
import oracles

CONFIG = RadarConfig()
RES = derive_resolutions(CONFIG)
RANGE_TOL = 0.0585  # half of the 0.117 m range resolution
AZIMUTH_TOL = 0.53  # half of the 1.05 deg azimuth resolution


def random_transform(seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return RigidTransform(Rotation.random(random_state=seed).as_matrix(), rng.uniform(-scale, scale, 3))


# -- 1 ----------------------------------------------------------------------------------

def test_c01_end_to_end_recovery(tmp_path, capsys, criterion):
    targets = tmp_path / "t.csv"
    write_targets(targets, [PointTarget(5.0, 1.0, 10.0)])
    worst = [0.0, 0.0, 0.0]
    slowest = 0.0
    ok = True
    for label, noise in (("noiseless", []), ("20dB", ["--snr-db", "20"])):
        cube, pc = tmp_path / f"{label}.cube", tmp_path / f"{label}.csv"
        assert cli.main(["simulate", "--targets", str(targets), "--out", str(cube), "--seed", "1", *noise]) == 0
        t0 = time.perf_counter()
        assert cli.main(["process", str(cube), "--out", str(pc)]) == 0
        slowest = max(slowest, time.perf_counter() - t0)
        rows = read_pointcloud(pc)
        ok &= len(rows) == 1
        if rows:
            r = rows[0]
            errs = (abs(r["range_m"] - 5.0), abs(r["velocity_mps"] - 1.0), abs(r["azimuth_deg"] - 10.0))
            worst = [max(a, b) for a, b in zip(worst, errs)]
    capsys.readouterr()
    ok &= worst[0] <= RANGE_TOL and worst[1] <= RES.velocity_res / 2 and worst[2] <= AZIMUTH_TOL
    ok &= slowest < 2.0
    criterion(1, ok, f"range err {worst[0]:.4f} m (<= {RANGE_TOL}), velocity err {worst[1]:.4f} m/s "
                     f"(<= {RES.velocity_res / 2:.4f}), azimuth err {worst[2]:.3f} deg (<= {AZIMUTH_TOL}), "
                     f"process {slowest:.2f} s/frame (< 2)")


# -- 2 ----------------------------------------------------------------------------------

def separated_targets(rng):
    while True:
        ts = [PointTarget(rng.uniform(0.5, 14.0), rng.uniform(-0.9, 0.9) * RES.max_velocity,
                          rng.uniform(-50.0, 50.0)) for _ in range(3)]
        if all(abs(a.range - b.range) >= 3 * RES.range_res or
               abs(a.radial_velocity - b.radial_velocity) >= 3 * RES.velocity_res
               for a, b in itertools.combinations(ts, 2)):
            return ts


@pytest.mark.slow
def test_c02_multi_target_separation(criterion):
    noise = noise_std_for_snr(CONFIG, 20.0)
    hits = 0
    for seed in range(100):
        targets = separated_targets(np.random.default_rng(seed))
        cloud = cube_to_pointcloud(synthesize_adc_cube(CONFIG, targets, noise, seed=seed), CONFIG)
        hits += len(cloud) == 3
    criterion(2, hits >= 95, f"{hits}/100 seeded 20 dB trials gave exactly 3 detections (need >= 95)")


# -- 3 ----------------------------------------------------------------------------------

def false_alarm_rate(config, params, min_cells=1_000_000):
    cells = alarms = seed = 0
    while cells < min_cells:
        cube = synthesize_adc_cube(config, [], 1.0, seed=seed)
        power = rd_map(doppler_fft(range_fft(cube)))
        alarms += len(cfar_detect(power, params))
        cells += power.power.size
        seed += 1
    return alarms / cells, cells


@pytest.mark.slow
def test_c03_cfar_false_alarm_rate(criterion):
    single, n1 = false_alarm_rate(RadarConfig(num_virtual=1), CfarParams(probability_false_alarm=1e-4))
    # the full array sums 86 exponential channels per cell, so the threshold uses 86 looks
    full, n2 = false_alarm_rate(CONFIG, CfarParams(probability_false_alarm=1e-4, num_looks=CONFIG.num_virtual))
    lo, hi = 0.33e-4, 3e-4
    ok = lo <= single <= hi and lo <= full <= hi
    criterion(3, ok, f"empirical Pfa {single:.3e} over {n1} single-channel cells, {full:.3e} over {n2} "
                     f"86-channel cells (target [{lo:.2e}, {hi:.0e}])")


# -- 4 ----------------------------------------------------------------------------------

def test_c04_channel_calibration_closed_loop(criterion):
    params = ChannelCalibParams.for_config(CONFIG)
    errors = ChannelErrorProfile.random(CONFIG.num_virtual, seed=21)
    clean = make_corner_reflector_scene(CONFIG, 5.0, errors)
    before = peak_phase_spread(clean)
    noiseless = peak_phase_spread(apply_channel_calibration(clean, calibrate_channels(clean, params)))

    # calibration measured on a 30 dB corner, residual judged on the noise-free response
    noisy = make_corner_reflector_scene(CONFIG, 5.0, errors, seed=4, noise_std=noise_std_for_snr(CONFIG, 30.0))
    cal = calibrate_channels(noisy, params)
    noisy_residual = math.degrees(peak_phase_spread(apply_channel_calibration(clean, cal)))

    scene = synthesize_adc_cube(CONFIG, [PointTarget(7.0, 0.0, 10.0)], errors=errors)
    angle_bin = math.degrees(1.0 / (CONFIG.element_spacing * 256) / math.cos(math.radians(10.0)))
    raw = cube_to_pointcloud(scene, CONFIG)
    fixed = cube_to_pointcloud(apply_channel_calibration(scene, cal), CONFIG)
    raw_err = min((abs(d.azimuth - 10.0) for d in raw), default=math.inf)
    fixed_err = abs(fixed[0].azimuth - 10.0) if len(fixed) == 1 else math.inf
    ok = noiseless < 1e-6 and noisy_residual < 2.0 and fixed_err < angle_bin
    criterion(4, ok, f"spread {before:.3f} rad -> {noiseless:.1e} rad noiseless (< 1e-6), "
                     f"{noisy_residual:.2f} deg at 30 dB (< 2); DOA err {raw_err:.2f} -> {fixed_err:.3f} deg "
                     f"(< {angle_bin:.3f})")


# -- 5 ----------------------------------------------------------------------------------

def test_c05_rigid_extrinsics(criterion):
    rng = np.random.default_rng(5)
    worst_r = worst_t = 0.0
    for trial in range(20):
        truth = random_transform(trial, 2.0)
        pts = rng.uniform(-3, 3, (10, 3))
        t, _ = estimate_rigid_transform([CorrespondencePair(a, b) for a, b in zip(pts, transform_points(truth, pts))])
        worst_r = max(worst_r, rotation_distance(t.rotation, truth.rotation))
        worst_t = max(worst_t, float(np.linalg.norm(t.translation - truth.translation)))
    rot, trans = [], []
    for trial in range(100):
        truth = random_transform(1000 + trial, 1.0)
        pts = rng.uniform(-3, 3, (10, 3)) + [0.0, 5.0, 0.0]
        dst = transform_points(truth, pts) + rng.normal(0, 0.01, (10, 3))
        t, _ = estimate_rigid_transform([CorrespondencePair(a, b) for a, b in zip(pts, dst)])
        rot.append(math.degrees(rotation_distance(t.rotation, truth.rotation)))
        trans.append(float(np.linalg.norm(t.translation - truth.translation)))
    med_r, med_t = float(np.median(rot)), float(np.median(trans))
    ok = worst_r < 1e-9 and worst_t < 1e-9 and med_r < 0.5 and med_t < 0.02
    criterion(5, ok, f"noiseless {worst_r:.1e} rad / {worst_t:.1e} m (< 1e-9); 1 cm noise median "
                     f"{med_r:.3f} deg (< 0.5) / {100 * med_t:.2f} cm (< 2)")


# -- 6 ----------------------------------------------------------------------------------

def test_c06_joint_extrinsics(criterion):
    truth = random_transform(606, 0.1)
    views = []
    for i in range(10):
        ir = random_transform(700 + i, 2.0)
        views.append(ViewExtrinsics(compose(truth, ir), ir))
    out = joint_extrinsics(views)
    err = max(float(np.max(np.abs(out.rotation - truth.rotation))),
              float(np.max(np.abs(out.translation - truth.translation))))
    consistency = max(float(np.max(np.abs(out.rotation @ v.ir.rotation - v.rgb.rotation))) for v in views)
    ok = err <= 1e-10 and consistency <= 1e-9
    criterion(6, ok, f"recovery error {err:.1e} (<= 1e-10), worst per-view |R R_ir - R_rgb| {consistency:.1e}")


# -- 7 ----------------------------------------------------------------------------------

def test_c07_loss_stack(criterion):
    oracle_err = 0.0
    grad_err = 0.0
    skipped = 0
    ssi_drift = silog_drift = 0.0
    for seed in range(100):
        pred, gt, pseudo = depth_cases.random_instance(seed)
        ours = total_loss(pred, gt, pseudo)
        ref = oracles.total_loss(pred.tolist(), gt.values.tolist(), gt.valid.tolist(), pseudo.tolist())
        got = (ours.silog, ours.ssi, ours.smooth_l1, ours.gm, ours.gr, ours.total)
        oracle_err = max(oracle_err, float(np.max(np.abs(np.array(got) - ref))))

        err, n_skip = depth_cases.gradient_relative_error(pred, gt, pseudo)
        grad_err = max(grad_err, err)
        skipped += n_skip

        rng = np.random.default_rng(seed)
        a, b = rng.uniform(0.1, 10.0), rng.uniform(-5.0, 5.0)
        base = ssi_loss(pred, pseudo, gt.valid, ~gt.valid)[0]
        ssi_drift = max(ssi_drift, abs(ssi_loss(pred, a * pseudo + b, gt.valid, ~gt.valid)[0] - base))
        c = rng.uniform(0.01, 100.0)
        silog_drift = max(silog_drift, abs(silog_loss(c * pred, c * gt.values, gt.valid)
                                           - silog_loss(pred, gt.values, gt.valid)))
    ok = oracle_err <= 1e-12 and grad_err < 1e-4 and ssi_drift <= 1e-12 and silog_drift <= 1e-12
    criterion(7, ok, f"oracle {oracle_err:.1e} (<= 1e-12), gradient rel err {grad_err:.1e} (< 1e-4, "
                     f"{skipped} of 6400 px near kinks skipped), ssi drift {ssi_drift:.1e}, "
                     f"silog drift {silog_drift:.1e} (<= 1e-12)")


# -- 8 ----------------------------------------------------------------------------------

def test_c08_top_loss_masking(criterion):
    rng = np.random.default_rng(8)
    wrong_count = mismatches = nondeterministic = 0
    trials = 0
    for h, w in [(1, 1), (1, 7), (3, 10), (8, 8), (13, 17), (30, 30)]:
        for kind in ("distinct", "ties", "constant"):
            for _ in range(20):
                if kind == "distinct":
                    loss = rng.permutation(h * w).reshape(h, w).astype(float)
                elif kind == "ties":
                    loss = rng.integers(0, 3, (h, w)).astype(float)
                else:
                    loss = np.full((h, w), 0.5)
                mask = top_loss_mask(loss, 0.1)
                trials += 1
                wrong_count += int((~mask).sum()) != math.ceil(0.1 * h * w - 1e-9)
                mismatches += mask.tolist() != oracles.top_loss_mask(loss.tolist(), 0.1)
                nondeterministic += not np.array_equal(mask, top_loss_mask(loss.copy(), 0.1))
    ok = wrong_count == mismatches == nondeterministic == 0
    criterion(8, ok, f"{trials} inputs: {wrong_count} wrong ignore counts, {mismatches} tie-rule mismatches, "
                     f"{nondeterministic} nondeterministic")


# -- 9 ----------------------------------------------------------------------------------

def test_c09_metrics(criterion):
    worst = 0.0
    self_zero = True
    for seed in range(100):
        rng = np.random.default_rng(seed)
        shape = (int(rng.integers(1, 12)), int(rng.integers(1, 12)))
        pv = rng.random(shape) < 0.8
        gv = rng.random(shape) < 0.8
        pv.flat[0] = gv.flat[0] = True
        pred = DepthImage.from_masked(rng.uniform(0.0005, 8.0, shape), pv)
        gt = DepthImage.from_masked(rng.uniform(0.5, 8.0, shape), gv)
        m = depth_metrics(pred, gt)
        ref = oracles.depth_metrics(pred.values.tolist(), gt.values.tolist(), pv.tolist(), gv.tolist())
        worst = max(worst, float(np.max(np.abs(np.array([m.rmse, m.mae, m.irmse, m.imae]) - ref[:4]))))
        s = depth_metrics(gt, gt)
        self_zero &= (s.rmse, s.mae, s.irmse, s.imae) == (0.0, 0.0, 0.0, 0.0)
    ok = worst <= 1e-12 and self_zero
    criterion(9, ok, f"max deviation from per-pixel oracle {worst:.1e} (<= 1e-12), metrics(gt, gt) == 0: {self_zero}")


# -- 10 ---------------------------------------------------------------------------------

def test_c10_morphology(criterion):
    rng = np.random.default_rng(10)
    violations = 0
    for i in range(1000):
        shape = (int(rng.integers(1, 25)), int(rng.integers(1, 25)))
        mask = rng.random(shape) < rng.uniform(0.1, 0.9)
        k = int(rng.choice([1, 3, 5, 7]))
        opened = binary_opening(mask, k)
        closed = binary_closing(mask, k)
        violations += int(np.sum(opened & ~mask)) + int(np.sum(mask & ~closed))
        violations += not np.array_equal(binary_opening(opened, k), opened)
        violations += not np.array_equal(binary_closing(closed, k), closed)
    criterion(10, violations == 0, f"1000 random masks: {violations} inclusion or idempotence violations")


# -- 11 ---------------------------------------------------------------------------------

def test_c11_io(tmp_path, criterion):
    rng = np.random.default_rng(11)
    failures = []

    re = rng.standard_normal(CONFIG.cube_shape).astype(np.float32)
    im = rng.standard_normal(CONFIG.cube_shape).astype(np.float32)
    cube = AdcCube(re.astype(float) + 1j * im.astype(float), Domain.ADC)
    path = tmp_path / "c.cube"
    write_cube(cube, path)
    size = path.stat().st_size
    if read_cube(path).data.tobytes() != cube.data.tobytes():
        failures.append("cube")

    mm = rng.integers(0, 65536, (424, 512))
    depth = DepthImage.from_masked(mm / 1000.0, mm > 0)
    write_depth(depth, tmp_path / "d.png")
    if not np.array_equal(np.rint(read_depth(tmp_path / "d.png").values * 1000), mm):
        failures.append("depth")

    frames = [(i, sorted(rng.uniform(1.7e9, 1.7e9 + 10, 5).tolist())) for i in range(20)]
    for i in range(1, 20):
        frames[i] = (i, [max(a, b) for a, b in zip(frames[i][1], frames[i - 1][1])])
    write_timestamps(tmp_path / "ts.txt", frames)
    if parse_timestamps(tmp_path / "ts.txt") != frames:
        failures.append("timestamps")

    params = ChannelCalibParams.for_config(CONFIG)
    cal = calibrate_channels(make_corner_reflector_scene(
        CONFIG, errors=ChannelErrorProfile.random(CONFIG.num_virtual, 1, 0.3)), params)
    cal.save(tmp_path / "cal.json")
    back = ChannelCalibration.load(tmp_path / "cal.json")
    if not (np.array_equal(back.peak_index_deltas, cal.peak_index_deltas)
            and np.array_equal(back.phase_comp, cal.phase_comp) and back.params == cal.params):
        failures.append("channel calibration")
    t = random_transform(3)
    save_extrinsics(tmp_path / "extr.json", radar_to_ir=t)
    tb = transform_from_document(load_calibration_document(tmp_path / "extr.json"), "radar_to_ir")
    if not (np.array_equal(tb.rotation, t.rotation) and np.array_equal(tb.translation, t.translation)):
        failures.append("extrinsics")

    # corruption: every truncation point of a small cube and random byte flips
    small = tmp_path / "s.cube"
    write_cube(AdcCube(np.ones((3, 2, 2))), small)
    blob = small.read_bytes()
    handled = unhandled = 0
    corrupted = [blob[:n] for n in range(len(blob))]
    for _ in range(300):
        b = bytearray(blob)
        b[int(rng.integers(0, 28))] = int(rng.integers(0, 256))
        corrupted.append(bytes(b))
    corrupted.append(blob + b"\0")
    for data in corrupted:
        small.write_bytes(data)
        try:
            out = read_cube(small)
            if cube_file_size(out.dims) != len(data):
                unhandled += 1
        except ParseError:
            handled += 1
        except Exception:
            unhandled += 1

    ok = not failures and unhandled == 0 and size == 5_636_124
    criterion(11, ok, f"round trips failed: {failures or 'none'}; {handled} corrupted inputs raised "
                      f"ParseError, {unhandled} unhandled; default cube file {size} bytes (== 5636124)")


# -- 12 ---------------------------------------------------------------------------------

def _snapshot(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def _run_all(work, inputs, jobs):
    """Run every subcommand into ``work``; returns the stdout of each command."""
    work.mkdir()
    stdout = {}
    commands = {
        "simulate": ["simulate", "--targets", inputs / "t.csv", "--out", work / "cubes", "--frames", "8",
                     "--seed", "7", "--snr-db", "20", "--jobs", jobs],
        "process": ["process", *[inputs / "cubes" / f"{i:06d}.cube" for i in range(8)], "--out", work / "pc",
                    "--rdmap", work / "rd", "--jobs", jobs],
        "calibrate-channels": ["calibrate-channels", "--corner", inputs / "corner.cube", "--out", work / "cal.json"],
        "calibrate-extrinsics": ["calibrate-extrinsics", "--pairs", inputs / "pairs.csv", "--out",
                                 work / "extr.json"],
        "eval-depth": ["eval-depth", "--pred", inputs / "pred.png", "--gt", inputs / "gt.png"],
        "denoise": ["denoise", "--in", inputs / "pred.png", "--out", work / "den.png"],
        "project": ["project", "--pointcloud", inputs / "pc.csv", "--calib", inputs / "extr.json",
                    "--intrinsics", inputs / "intr.json", "--out", work / "sparse.png"],
    }
    for name, argv in commands.items():
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf), contextlib.redirect_stderr(io.StringIO()):
            code = cli.main([str(a) for a in argv])
        assert code == 0, name
        stdout[name] = buf.getvalue()
    return stdout


def test_c12_cli_determinism(tmp_path, criterion):
    rng = np.random.default_rng(12)
    inputs = tmp_path / "inputs"
    inputs.mkdir()
    write_targets(inputs / "t.csv", [PointTarget(3.0, 0.5, -15.0), PointTarget(8.0, -1.0, 20.0)])
    assert cli.main(["simulate", "--targets", str(inputs / "t.csv"), "--out", str(inputs / "cubes"),
                     "--frames", "8", "--seed", "1", "--snr-db", "20"]) == 0
    write_cube(make_corner_reflector_scene(CONFIG, errors=ChannelErrorProfile.random(CONFIG.num_virtual, 2, 0.2),
                                           seed=3, noise_std=noise_std_for_snr(CONFIG, 30.0)),
               inputs / "corner.cube")
    truth = RigidTransform(RADAR_TO_CAMERA_AXES, [0.05, 0.0, -0.02])
    pts = rng.uniform(-2, 2, (10, 3))
    write_pairs(inputs / "pairs.csv", [CorrespondencePair(a, b) for a, b in
                                       zip(pts, transform_points(truth, pts) + rng.normal(0, 0.01, (10, 3)))])
    gt = rng.uniform(0.5, 8.0, (48, 64))
    write_depth(DepthImage.from_masked(gt, rng.random(gt.shape) < 0.7), inputs / "gt.png")
    write_depth(DepthImage.from_masked(gt + rng.normal(0, 0.05, gt.shape), rng.random(gt.shape) < 0.7),
                inputs / "pred.png")
    (inputs / "pc.csv").write_text("x_m,y_m,z_m,range_m,velocity_mps,azimuth_deg,snr_db\n"
                                   "0.0,4.0,0.0,4.0,0,0,20\n0.5,3.0,0.0,3.04,0,9.46,18\n")
    save_extrinsics(inputs / "extr.json", radar_to_ir=truth)
    save_extrinsics(inputs / "intr.json", ir=CameraIntrinsics(365.0, 365.0, 256.0, 212.0, 512, 424))
    before_inputs = _snapshot(inputs)

    runs = {}
    for label, jobs in (("a", 1), ("b", 1), ("c", 8)):
        out = _run_all(tmp_path / label, inputs, jobs)
        runs[label] = (_snapshot(tmp_path / label), out)
    outs = [runs[k][1] for k in "abc"]
    differing = [name for name in outs[0] if not (outs[0][name] == outs[1][name] == outs[2][name])]
    files_a = runs["a"][0]
    differing += [f for f in files_a if not (files_a[f] == runs["b"][0].get(f) == runs["c"][0].get(f))]
    untouched = _snapshot(inputs) == before_inputs
    ok = not differing and untouched and set(files_a) == set(runs["c"][0])
    criterion(12, ok, f"7 commands x 3 runs (jobs 1, 1, 8): {len(files_a)} output files, "
                      f"differing outputs: {differing or 'none'}; inputs unmodified: {untouched}")
