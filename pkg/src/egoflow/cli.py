"""egoflow command line.

Exit codes: 0 success, 1 at least one frame failed, 2 usage or validation error.
Logs go to stderr; data goes to files (``flow viz --stdout`` is the one
exception and writes a PNG to stdout).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import codec, kitti, segment, synth, vmt
from .errors import FormatError, ParameterError
from .geometry import CameraIntrinsics, DepthModel, EgoMotion, ego_field

log = logging.getLogger("egoflow")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2
SYNTH_EPOCH_NS = 946_684_800 * 1_000_000_000  # 2000-01-01
# synthetic rig: IMU x forward, y left, z up -> camera x right, y down, z forward
SYNTH_VELO_TO_CAM = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


class UsageError(Exception):
    pass


class FrameSizeError(Exception):
    """An input raster does not match the calibrated image size."""


def _jobs(args) -> int:
    if args.jobs is not None:
        jobs = args.jobs
    else:
        env = os.environ.get("EGOFLOW_THREADS")
        try:
            jobs = int(env) if env else 1
        except ValueError:
            raise UsageError(f"EGOFLOW_THREADS must be an integer, got {env!r}") from None
    if jobs < 1:
        raise UsageError(f"parallelism must be at least 1, got {jobs}")
    return jobs


def _existing(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} path does not exist: {p}")
    return p


def _run_frames(func, frames, jobs: int):
    """Apply ``func`` to each frame; returns results in frame order (exceptions captured)."""
    def safe(frame):
        try:
            return func(frame), None
        except Exception as exc:  # per-frame failure is reported, not fatal
            return None, exc

    if jobs == 1:
        return [safe(f) for f in frames]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(safe, frames))


def _load_rig(args):
    calib = _existing(args.calib, "calibration")
    oxts_path = _existing(args.oxts, "OXTS")
    try:
        imu_to_cam, intr = kitti.load_calib(calib)
        records = kitti.load_oxts(oxts_path)
    except (FormatError, ParameterError) as exc:
        raise UsageError(str(exc)) from None
    if len(records) < 2:
        raise UsageError(f"{oxts_path}: need at least two OXTS records, found {len(records)}")
    return imu_to_cam, intr, records


def _frame_ego(records, imu_to_cam, t: int, yaw: bool = False) -> EgoMotion:
    if t < 1 or t >= len(records):
        raise ParameterError(f"frame {t} has no OXTS pair (have {len(records)} records)")
    ego = kitti.differential_egomotion(records[t - 1], records[t], imu_to_cam)
    return kitti.yaw_only(ego) if yaw else ego


def _frame_range(text, n: int):
    if not text:
        return range(1, n)
    start, _, stop = text.partition(":")
    start = max(1, int(start) if start else 1)
    stop = min(n, int(stop) if stop else n)
    return range(start, stop)


# --------------------------------------------------------------------------
# vmt

def cmd_vmt(args) -> int:
    jobs = _jobs(args)
    imu_to_cam, intr, records = _load_rig(args)
    try:
        depth = DepthModel(args.depth)
        norm = codec.Normalization.parse(args.norm) if args.norm else None
        frames = list(_frame_range(args.frames, len(records)))
    except (ParameterError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log.info("frame 0 has no predecessor; no VMT is written for it")

    def ego_of(t):
        return _frame_ego(records, imu_to_cam, t, args.yaw_only)

    if norm is None:
        # network-bound default: fixed scale from this sequence's magnitude distribution
        fields = _run_frames(lambda t: ego_field(intr, ego_of(t), depth), frames, jobs)
        scale = vmt.calibrate_scale([f for f, err in fields if err is None], args.percentile)
        norm = codec.Normalization.fixed(scale if scale is not None else 1.0)
        log.info("calibrated normalization %s (p%g)", norm, args.percentile)

    def work(t):
        ego = ego_of(t)
        stem = out / f"{t:010d}"
        field = ego_field(intr, ego, depth)
        image = vmt.build_vmt(intr, ego, depth, norm)
        Path(f"{stem}.png").write_bytes(image.to_png())
        Path(f"{stem}.flo").write_bytes(codec.write_flo(field))
        Path(f"{stem}.vmt").write_bytes(vmt.write_tensor(vmt.field_planes(field)))
        if args.stacked:
            planes = vmt.decompose_vmt(intr, ego, depth).planes()
            Path(f"{stem}_planes.vmt").write_bytes(vmt.write_tensor(planes))

    failed = 0
    for t, (_, err) in zip(frames, _run_frames(work, frames, jobs)):
        if err is not None:
            failed += 1
            log.error("frame %d: %s", t, err)
    (out / "vmt.kv").write_text(
        f"frames={len(frames)}\nfailed={failed}\nnorm={norm}\ndepth={depth.constant_depth!r}\n"
        f"yaw_only={int(bool(args.yaw_only))}\n"
    )
    return EXIT_FAILED if failed else EXIT_OK


# --------------------------------------------------------------------------
# flow

def _read_flow_file(path: Path) -> codec.FlowImage:
    return codec.read_flow(path.read_bytes())


def _write_flow_file(path: Path, flow: codec.FlowImage) -> None:
    suffix = path.suffix.lower()
    if suffix == ".flo":
        path.write_bytes(codec.write_flo(flow))
    elif suffix == ".png":
        path.write_bytes(codec.write_kitti_flow_png(flow))
    else:
        raise UsageError(f"output must end in .flo or .png, got {path.name}")


def cmd_flow(args) -> int:
    src = _existing(args.input, "input")
    try:
        flow = _read_flow_file(src)
    except FormatError as exc:
        raise UsageError(f"{src}: {exc}") from None
    if args.action == "convert":
        _write_flow_file(Path(args.output), flow)
        return EXIT_OK
    max_mag = codec.AUTO if args.max in (None, "auto") else float(args.max)
    try:
        png = codec.colorwheel_encode(flow.field, max_mag).to_png()
    except ParameterError as exc:
        raise UsageError(str(exc)) from None
    if args.stdout:
        sys.stdout.buffer.write(png)
        sys.stdout.buffer.flush()
    elif args.output:
        Path(args.output).write_bytes(png)
    else:
        raise UsageError("viz needs an output path or --stdout")
    return EXIT_OK


# --------------------------------------------------------------------------
# segment

def _indexed(directory: Path, suffixes):
    """Frame -> file; when a frame has several, the earlier suffix in ``suffixes`` wins."""
    out = {}
    for p in sorted(directory.iterdir()):
        suffix = p.suffix.lower()
        if suffix not in suffixes or not p.stem.isdigit():
            continue
        t = int(p.stem)
        if t not in out or suffixes.index(suffix) < suffixes.index(out[t].suffix.lower()):
            out[t] = p
    return out


def cmd_segment(args) -> int:
    jobs = _jobs(args)
    flow_dir = _existing(args.flow, "flow")
    imu_to_cam, intr, records = _load_rig(args)
    gt_dir = _existing(args.gt, "ground-truth") if args.gt else None
    try:
        depth = DepthModel(args.depth)
        if args.tau < 0:
            raise ParameterError(f"tau must be nonnegative, got {args.tau}")
    except ParameterError as exc:
        raise UsageError(str(exc)) from None
    # .flo first, so a vmt output directory (colorwheel .png next to .flo) reads as flow
    flows = _indexed(flow_dir, (".flo", ".png"))
    if not flows:
        raise UsageError(f"no .flo/.png flow files in {flow_dir}")
    gts = _indexed(gt_dir, (".png",)) if gt_dir else {}
    if 0 in flows:
        log.info("frame 0 has no predecessor; skipped")
    frames = [t for t in flows if t >= 1]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def work(t):
        flow = _read_flow_file(flows[t])
        if flow.field.shape != intr.shape:
            raise FrameSizeError(f"flow is {flow.width}x{flow.height}, calibration says {intr.width}x{intr.height}")
        predicted = ego_field(intr, _frame_ego(records, imu_to_cam, t), depth)
        mask = segment.threshold_segment(segment.compensate(flow, predicted), args.tau, args.majority)
        (out / f"{t:010d}.png").write_bytes(mask.to_png())
        if gt_dir is None:
            return None
        if t not in gts:
            raise FormatError(f"no ground-truth mask for frame {t}")
        gt = segment.SegMask.from_png(gts[t].read_bytes())
        if gt.moving.shape != mask.moving.shape:
            raise FrameSizeError(f"ground truth is {gt.width}x{gt.height}, flow is {mask.width}x{mask.height}")
        return mask, gt

    results = _run_frames(work, frames, jobs)
    failed = 0
    size_errors = 0
    lines, kv, pairs = [], [], []
    for t, (res, err) in zip(frames, results):
        if err is not None:
            failed += 1
            size_errors += isinstance(err, FrameSizeError)
            log.error("frame %d: %s", t, err)
            continue
        if res is not None:
            report = segment.evaluate(*res)
            pairs.append(res)
            lines.append(report.to_text(f"frame {t:010d}"))
            kv.extend(f"frame_{t:010d}.{k}={v!r}\n" for k, v in report.as_dict().items())
    if gt_dir is not None and pairs:
        total = segment.evaluate_many(pairs)
        lines.append(total.to_text("total"))
        (out / "report.txt").write_text("".join(lines))
        (out / "report.kv").write_text(total.to_keyvalue() + f"frames={len(pairs)}\n" + "".join(kv))
    if size_errors:
        return EXIT_USAGE
    return EXIT_FAILED if failed else EXIT_OK


# --------------------------------------------------------------------------
# synth

def write_scene_job(root: Path, scene: synth.SceneSpec, noise: float = 0.0, seed: int = 0) -> None:
    """One frame pair in KITTI raw layout plus ground truth and a segment config."""
    root.mkdir(parents=True, exist_ok=True)
    (root / "scene.txt").write_text(synth.dump_suite([scene]))
    kitti.write_calib(root / "calib", kitti.RigidTransform.identity(),
                      kitti.RigidTransform(SYNTH_VELO_TO_CAM, np.zeros(3)), scene.intr)
    dt = synth.SYNTH_DT
    R = SYNTH_VELO_TO_CAM
    rate = R.T @ np.asarray(scene.ego.omega) / dt
    vel = R.T @ np.asarray(scene.ego.translation) / dt
    rec = kitti.OxtsRecord(0.0, 0.0, 0.0, *vel, *rate)
    kitti.write_oxts(root / "oxts", [rec, rec], [SYNTH_EPOCH_NS, SYNTH_EPOCH_NS + int(dt * 1e9)])
    flow, mask = synth.render_flow(scene, noise=noise, seed=seed)
    for sub in ("flow", "flow_exact", "gt"):
        (root / sub).mkdir(exist_ok=True)
    # KITTI PNG keeps the validity mask (points leaving the view); .flo keeps full precision
    (root / "flow" / "0000000001.png").write_bytes(codec.write_kitti_flow_png(flow))
    (root / "flow_exact" / "0000000001.flo").write_bytes(codec.write_flo(flow))
    (root / "gt" / "0000000001.png").write_bytes(mask.to_png())
    (root / "segment.cfg").write_text(
        f"flow=flow\ncalib=calib\noxts=oxts\ngt=gt\nout=segment\ndepth={scene.background_depth!r}\n"
    )


def cmd_synth(args) -> int:
    if args.count < 1:
        raise UsageError(f"--count must be at least 1, got {args.count}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenes = synth.make_suite(args.seed, args.count, movers=not args.static)
    (out / "suite.txt").write_text(synth.dump_suite(scenes))
    jobs = _jobs(args)
    results = _run_frames(lambda s: write_scene_job(out / s.name, s, args.noise, args.seed),
                          scenes, jobs)
    failed = 0
    for scene, (_, err) in zip(scenes, results):
        if err is not None:
            failed += 1
            log.error("%s: %s", scene.name, err)
    return EXIT_FAILED if failed else EXIT_OK


# --------------------------------------------------------------------------
# bench

def bench_vmt(width: int, height: int, iterations: int, norm=codec.PER_FRAME_MAX, warmup: int = 5):
    """Per-call wall time (s) of build_vmt at a KITTI-like camera."""
    intr = CameraIntrinsics(0.58 * width, 0.58 * width, (width - 1) / 2, (height - 1) / 2, width, height)
    ego = EgoMotion((0.002, 0.02, 0.001), (0.02, 0.0, 1.0), 0.1)
    depth = DepthModel()
    for _ in range(warmup):
        vmt.build_vmt(intr, ego, depth, norm)
    times = np.empty(iterations)
    for i in range(iterations):
        t0 = time.perf_counter()
        vmt.build_vmt(intr, ego, depth, norm)
        times[i] = time.perf_counter() - t0
    return times


def cmd_bench(args) -> int:
    if args.iterations < 1:
        raise UsageError(f"--iterations must be positive, got {args.iterations}")
    if args.width < 1 or args.height < 1:
        raise UsageError("resolution must be positive")
    norm = codec.Normalization.parse(args.norm)
    times = bench_vmt(args.width, args.height, args.iterations, norm) * 1e3
    p50, p95 = np.percentile(times, [50, 95])
    msg = (f"build_vmt {args.width}x{args.height}: {args.iterations} iterations, "
           f"p50 {p50:.3f} ms, p95 {p95:.3f} ms, max {times.max():.3f} ms")
    print(msg, file=sys.stderr)
    if args.report:
        Path(args.report).write_text(
            f"width={args.width}\nheight={args.height}\niterations={args.iterations}\n"
            f"p50_ms={p50!r}\np95_ms={p95!r}\nmax_ms={times.max()!r}\n"
        )
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-j", "--jobs", type=int, default=None,
                        help="worker threads (default: $EGOFLOW_THREADS or 1)")
    common.add_argument("--config", help="key=value file supplying defaults for this command")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="egoflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("vmt", parents=[common], help="generate VMT images for an OXTS sequence")
    p.add_argument("--calib", required=True, help="directory with the KITTI calibration files")
    p.add_argument("--oxts", required=True, help="KITTI oxts directory")
    p.add_argument("--out", required=True)
    p.add_argument("--yaw-only", action="store_true")
    p.add_argument("--depth", type=float, default=10.0, help="constant plane depth in meters")
    p.add_argument("--norm", default=None,
                   help="'auto' (per-frame max) or 'fixed:S'; default fixed at the sequence percentile")
    p.add_argument("--percentile", type=float, default=98.0)
    p.add_argument("--frames", default=None, help="frame range START:STOP")
    p.add_argument("--stacked", action="store_true", help="also write the 12 per-component planes")
    p.set_defaults(func=cmd_vmt)

    p = sub.add_parser("flow", parents=[common], help="convert or visualize flow files")
    p.add_argument("action", choices=["convert", "viz"])
    p.add_argument("input")
    p.add_argument("output", nargs="?")
    p.add_argument("--max", default=None, help="viz saturation magnitude in px, or 'auto'")
    p.add_argument("--stdout", action="store_true", help="viz: write the PNG to standard output")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("segment", parents=[common], help="ego-motion compensated segmentation")
    p.add_argument("--flow", required=True, help="directory of <frame>.flo or KITTI <frame>.png")
    p.add_argument("--calib", required=True)
    p.add_argument("--oxts", required=True)
    p.add_argument("--gt", default=None, help="directory of <frame>.png ground-truth masks")
    p.add_argument("--tau", type=float, default=segment.DEFAULT_TAU)
    p.add_argument("--depth", type=float, default=10.0)
    p.add_argument("--majority", action="store_true", help="3x3 majority filter on masks")
    p.add_argument("--out", default="segment_out")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("synth", parents=[common], help="write a seeded synthetic suite")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--static", action="store_true", help="no moving objects")
    p.add_argument("--noise", type=float, default=0.0, help="flow noise sigma in px")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", parents=[common], help="time build_vmt")
    p.add_argument("--width", type=int, default=1224)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--norm", default="auto")
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_bench)
    return parser


_PATH_KEYS = {"calib", "oxts", "out", "flow", "gt", "input", "output", "report"}


def _apply_config(parser: argparse.ArgumentParser, argv):
    """Parse with defaults from ``--config``; explicit flags still win."""
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in choices), None)
    if not known.config or command is None:
        return parser.parse_args(argv)
    cfg = _existing(known.config, "config")
    try:
        values = segment.parse_keyvalue(cfg.read_text())
    except FormatError as exc:
        raise UsageError(f"{cfg}: {exc}") from None
    subparser = choices[command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in values.items():
        dest = key.replace("-", "_")
        if dest not in actions or dest in ("help", "config"):
            raise UsageError(f"{cfg}: unknown key {key!r} for '{command}'")
        action = actions[dest]
        try:
            if dest in _PATH_KEYS:
                value = str(cfg.parent / raw)
            elif isinstance(action, argparse._StoreTrueAction):
                value = raw.lower() in ("1", "true", "yes", "on")
            elif action.type is not None:
                value = action.type(raw)
            else:
                value = raw
        except ValueError:
            raise UsageError(f"{cfg}: bad value for {key}: {raw!r}") from None
        defaults[dest] = value
        action.required = False
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(
            level=logging.WARNING - 10 * min(args.verbose, 2),
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        return args.func(args)
    except UsageError as exc:
        print(f"egoflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
