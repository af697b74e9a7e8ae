"""KITTI raw-data ingestion: OXTS records, calibration, per-frame ego-motion."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import FormatError, ParameterError, ParseError
from .geometry import CameraIntrinsics, EgoMotion

log = logging.getLogger(__name__)

OXTS_FIELDS = (
    "lat", "lon", "alt", "roll", "pitch", "yaw", "vn", "ve", "vf", "vl", "vu",
    "ax", "ay", "az", "af", "al", "au", "wx", "wy", "wz", "wf", "wl", "wu",
    "pos_accuracy", "vel_accuracy", "navstat", "numsats", "posmode", "velmode", "orimode",
)
_IDX = {name: i for i, name in enumerate(OXTS_FIELDS)}
NOMINAL_DT = 0.1
_EPOCH = datetime(1970, 1, 1)
ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class OxtsRecord:
    roll: float
    pitch: float
    yaw: float
    forward_vel: float
    left_vel: float
    up_vel: float
    ang_rate_x: float
    ang_rate_y: float
    ang_rate_z: float
    # seconds since the first frame of the sequence
    timestamp: Optional[float] = None

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.forward_vel, self.left_vel, self.up_vel])

    @property
    def angular_rate(self) -> np.ndarray:
        return np.array([self.ang_rate_x, self.ang_rate_y, self.ang_rate_z])


def parse_oxts_line(text: str, timestamp: Optional[float] = None) -> OxtsRecord:
    tokens = text.split()
    if len(tokens) < len(OXTS_FIELDS):
        raise ParseError(f"OXTS record has {len(tokens)} fields, expected {len(OXTS_FIELDS)}",
                         index=len(tokens))
    values = []
    for i, tok in enumerate(tokens[:len(OXTS_FIELDS)]):
        try:
            x = float(tok)
        except ValueError:
            raise ParseError(f"OXTS field {i} ({OXTS_FIELDS[i]}) is not numeric: {tok!r}", index=i) from None
        if not math.isfinite(x):
            raise ParseError(f"OXTS field {i} ({OXTS_FIELDS[i]}) is not finite", index=i)
        values.append(x)
    yaw = values[_IDX["yaw"]]
    if abs(yaw) > math.pi + 1e-9:
        raise ParseError(f"yaw {yaw} outside [-pi, pi]", index=_IDX["yaw"])
    return OxtsRecord(
        roll=values[_IDX["roll"]],
        pitch=values[_IDX["pitch"]],
        yaw=yaw,
        forward_vel=values[_IDX["vf"]],
        left_vel=values[_IDX["vl"]],
        up_vel=values[_IDX["vu"]],
        ang_rate_x=values[_IDX["wx"]],
        ang_rate_y=values[_IDX["wy"]],
        ang_rate_z=values[_IDX["wz"]],
        timestamp=timestamp,
    )


def format_oxts_line(rec: OxtsRecord) -> str:
    """Inverse of :func:`parse_oxts_line`; unused fields are written as 0."""
    values = [0.0] * len(OXTS_FIELDS)
    values[_IDX["roll"]] = rec.roll
    values[_IDX["pitch"]] = rec.pitch
    values[_IDX["yaw"]] = rec.yaw
    values[_IDX["vf"]] = rec.forward_vel
    values[_IDX["vl"]] = rec.left_vel
    values[_IDX["vu"]] = rec.up_vel
    values[_IDX["wx"]] = rec.ang_rate_x
    values[_IDX["wy"]] = rec.ang_rate_y
    values[_IDX["wz"]] = rec.ang_rate_z
    return " ".join(repr(float(x)) for x in values)


_TS_RE = re.compile(r"^(\d{4}-\d{2}-\d{2})[ T](\d{2}):(\d{2}):(\d{2})(?:\.(\d+))?$")


def parse_timestamp_ns(text: str) -> int:
    """KITTI timestamp ``YYYY-MM-DD hh:mm:ss.nnnnnnnnn`` -> integer nanoseconds since the epoch (UTC)."""
    m = _TS_RE.match(text.strip())
    if not m:
        raise ParseError(f"bad timestamp {text!r}")
    day = datetime.strptime(m.group(1), "%Y-%m-%d")
    whole = (day - _EPOCH).days * 86400
    whole += int(m.group(2)) * 3600 + int(m.group(3)) * 60 + int(m.group(4))
    frac = (m.group(5) or "0")[:9].ljust(9, "0")
    return whole * 1_000_000_000 + int(frac)


def format_timestamp(ns: int) -> str:
    whole, frac = divmod(int(ns), 1_000_000_000)
    stamp = _EPOCH + timedelta(seconds=whole)
    return f"{stamp:%Y-%m-%d %H:%M:%S}.{frac:09d}"


def _interval(prev: OxtsRecord, curr: OxtsRecord) -> float:
    if prev.timestamp is None or curr.timestamp is None:
        log.warning("missing OXTS timestamp, assuming dt=%.2f s", NOMINAL_DT)
        return NOMINAL_DT
    # timestamps are nanosecond-resolution; drop float noise from the subtraction
    return round((curr.timestamp - prev.timestamp) * 1e9) / 1e9


def load_oxts(path) -> List[OxtsRecord]:
    """Load a KITTI ``oxts`` directory (data/*.txt + timestamps.txt) or a one-line-per-frame file."""
    path = Path(path)
    if path.is_dir():
        data_dir = path / "data" if (path / "data").is_dir() else path
        files = sorted(data_dir.glob("*.txt"))
        files = [f for f in files if f.name != "timestamps.txt"]
        lines = []
        for f in files:
            text = f.read_text().strip()
            if not text:
                raise ParseError(f"{f}: empty OXTS file")
            lines.append(text.splitlines()[0])
        ts_file = path / "timestamps.txt"
    else:
        lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
        ts_file = path.with_name("timestamps.txt")
    stamps: List[Optional[float]] = [None] * len(lines)
    if ts_file.is_file():
        ts_lines = [ln for ln in ts_file.read_text().splitlines() if ln.strip()]
        if len(ts_lines) != len(lines):
            raise FormatError(f"{ts_file}: {len(ts_lines)} timestamps for {len(lines)} OXTS records")
        ns = [parse_timestamp_ns(ln) for ln in ts_lines]
        # seconds relative to the first frame keep nanosecond resolution in a float
        stamps = [(t - ns[0]) / 1e9 for t in ns]
    else:
        log.warning("%s not found; frames assumed %.2f s apart", ts_file, NOMINAL_DT)
    records = []
    for i, (line, ts) in enumerate(zip(lines, stamps)):
        try:
            records.append(parse_oxts_line(line, ts))
        except ParseError as exc:
            raise ParseError(f"OXTS frame {i}: {exc}", index=exc.index) from None
    return records


def write_oxts(path, records: Sequence[OxtsRecord], timestamps_ns: Sequence[int]) -> None:
    path = Path(path)
    (path / "data").mkdir(parents=True, exist_ok=True)
    for i, rec in enumerate(records):
        (path / "data" / f"{i:010d}.txt").write_text(format_oxts_line(rec) + "\n")
    (path / "timestamps.txt").write_text("".join(format_timestamp(t) + "\n" for t in timestamps_ns))


# --------------------------------------------------------------------------
# calibration

@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        err = np.abs(R @ R.T - np.eye(3)).max()
        if err > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise FormatError(f"rotation is not orthonormal (|RR^T - I| = {err:.2e})")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def compose(self, first: "RigidTransform") -> "RigidTransform":
        """``self ∘ first``: apply ``first``, then ``self``."""
        return RigidTransform(self.rotation @ first.rotation,
                              self.rotation @ first.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out


def parse_calib_entries(text: str) -> Dict[str, np.ndarray]:
    """``key: v1 v2 ...`` lines; non-numeric entries (e.g. calib_time) are skipped."""
    entries = {}
    for line in text.splitlines():
        if ":" not in line:
            continue
        key, _, rest = line.partition(":")
        try:
            entries[key.strip()] = np.array([float(x) for x in rest.split()])
        except ValueError:
            continue
    return entries


def _need(entries: Dict[str, np.ndarray], key: str, size: int, source: str) -> np.ndarray:
    if key not in entries:
        raise FormatError(f"{source}: missing key {key!r}")
    arr = entries[key]
    if arr.size != size:
        raise FormatError(f"{source}: {key!r} has {arr.size} values, expected {size}")
    return arr


def parse_rigid(text: str, source: str = "calibration") -> RigidTransform:
    entries = parse_calib_entries(text)
    R = _need(entries, "R", 9, source).reshape(3, 3)
    T = _need(entries, "T", 3, source)
    return RigidTransform(R, T)


def parse_calib(imu_to_velo: str, velo_to_cam: str, cam_to_cam: str,
                camera: int = 2) -> Tuple[RigidTransform, CameraIntrinsics]:
    """Compose IMU -> rectified camera ``camera`` and read its rectified intrinsics.

    The chain is R_rect_00 · velo_to_cam · imu_to_velo, followed by the
    horizontal baseline offset baked into P_rect_0{camera}.
    """
    t_iv = parse_rigid(imu_to_velo, "calib_imu_to_velo")
    t_vc = parse_rigid(velo_to_cam, "calib_velo_to_cam")
    entries = parse_calib_entries(cam_to_cam)
    P = _need(entries, f"P_rect_{camera:02d}", 12, "calib_cam_to_cam").reshape(3, 4)
    size = _need(entries, f"S_rect_{camera:02d}", 2, "calib_cam_to_cam")
    chain = t_vc.compose(t_iv)
    if "R_rect_00" in entries:
        rect = RigidTransform(_need(entries, "R_rect_00", 9, "calib_cam_to_cam").reshape(3, 3), np.zeros(3))
        chain = rect.compose(chain)
    fx, fy = P[0, 0], P[1, 1]
    if fx <= 0 or fy <= 0:
        raise FormatError(f"P_rect_{camera:02d} has nonpositive focal length")
    offset = RigidTransform(np.eye(3), np.array([P[0, 3] / fx, P[1, 3] / fy, P[2, 3]]))
    imu_to_cam = offset.compose(chain)
    intr = CameraIntrinsics(fx, fy, P[0, 2], P[1, 2], int(round(size[0])), int(round(size[1])))
    return imu_to_cam, intr


CALIB_FILES = ("calib_imu_to_velo.txt", "calib_velo_to_cam.txt", "calib_cam_to_cam.txt")


def load_calib(path, camera: int = 2) -> Tuple[RigidTransform, CameraIntrinsics]:
    """Load the three KITTI calibration files from a directory."""
    path = Path(path)
    missing = [name for name in CALIB_FILES if not (path / name).is_file()]
    if missing:
        raise FormatError(f"{path}: missing calibration file(s) {', '.join(missing)}")
    return parse_calib(*((path / name).read_text() for name in CALIB_FILES), camera=camera)


def _fmt_row(values) -> str:
    return " ".join(repr(float(x)) for x in np.ravel(values))


def write_calib(path, imu_to_velo: RigidTransform, velo_to_cam: RigidTransform,
                intr: CameraIntrinsics, camera: int = 2) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for name, tf in (("calib_imu_to_velo.txt", imu_to_velo), ("calib_velo_to_cam.txt", velo_to_cam)):
        (path / name).write_text(f"R: {_fmt_row(tf.rotation)}\nT: {_fmt_row(tf.translation)}\n")
    P = np.zeros((3, 4))
    P[:, :3] = intr.matrix()
    (path / "calib_cam_to_cam.txt").write_text(
        f"R_rect_00: {_fmt_row(np.eye(3))}\n"
        f"S_rect_{camera:02d}: {float(intr.width)!r} {float(intr.height)!r}\n"
        f"P_rect_{camera:02d}: {_fmt_row(P)}\n"
    )


# --------------------------------------------------------------------------
# ego-motion

def differential_egomotion(prev: OxtsRecord, curr: OxtsRecord, imu_to_cam: RigidTransform,
                           dt: Optional[float] = None) -> EgoMotion:
    """Camera-frame ego-motion over the interval prev -> curr.

    The IMU rates of both records are averaged (trapezoidal rule) and
    integrated over dt; the small-angle rotation vector rate*dt is exact to
    O(|omega|^2). Both vectors are rotated into the camera frame.
    """
    if dt is None:
        dt = _interval(prev, curr)
    if not dt > 0:
        raise ParameterError(f"frame interval must be positive, got {dt}")
    rate = (prev.angular_rate + curr.angular_rate) / 2.0
    vel = (prev.velocity + curr.velocity) / 2.0
    R = imu_to_cam.rotation
    omega = R @ (rate * dt)
    translation = R @ (vel * dt)
    return EgoMotion(tuple(omega), tuple(translation), frame_interval=dt)


def sequence_egomotion(records: Sequence[OxtsRecord], imu_to_cam: RigidTransform) -> List[Optional[EgoMotion]]:
    """Ego-motion for every frame t from records (t-1, t); frame 0 has none."""
    out: List[Optional[EgoMotion]] = [None]
    for prev, curr in zip(records[:-1], records[1:]):
        out.append(differential_egomotion(prev, curr, imu_to_cam))
    return out


def yaw_only(ego: EgoMotion) -> EgoMotion:
    """Keep only the rotation about the camera y axis (steering), plus translation."""
    return EgoMotion((0.0, ego.omega[1], 0.0), ego.translation, ego.frame_interval)
