"""Rebuild tests/fixtures/kitti_segment from the KITTI IMU/GPS logs shipped in the gtsam wheel.

    pip download gtsam==4.2 --no-deps -d /tmp/gtsam
    python tools/build_kitti_fixture.py /tmp/gtsam/gtsam-4.2-*.whl

Frames are sampled at 10 Hz from the 100 Hz IMU log (nearest sample); see
the fixture README for which OXTS fields are measured and which are filled.
"""

import math
import sys
import zipfile
from pathlib import Path

import numpy as np

START = 46542.0
FRAMES = 40
OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "kitti_segment"

CALIB_IMU_TO_VELO = """calib_time: 25-May-2012 16:47:16
R: 9.999976e-01 7.553071e-04 -2.035826e-03 -7.854027e-04 9.998898e-01 -1.482298e-02 2.024406e-03 1.482454e-02 9.998881e-01
T: -8.086759e-01 3.195559e-01 -7.997231e-01
"""
CALIB_VELO_TO_CAM = """calib_time: 15-Mar-2012 11:37:16
R: 7.533745e-03 -9.999714e-01 -6.166020e-04 1.480249e-02 7.280733e-04 -9.998902e-01 9.998621e-01 7.523790e-03 1.480755e-02
T: -4.069766e-03 -7.631618e-02 -2.717806e-01
delta_f: 0.000000e+00 0.000000e+00
delta_c: 0.000000e+00 0.000000e+00
"""
CALIB_CAM_TO_CAM = """calib_time: 09-Jan-2012 13:57:47
corner_dist: 9.950000e-02
R_rect_00: 9.999239e-01 9.837760e-03 -7.445048e-03 -9.869795e-03 9.999421e-01 -4.278459e-03 7.402527e-03 4.351614e-03 9.999631e-01
S_rect_02: 1.242000e+03 3.750000e+02
P_rect_02: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 0.000000e+00 7.215377e+02 1.728540e+02 2.163791e-01 0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03
"""


def _load(zf, name, **kw):
    with zf.open(f"gtsam/Data/{name}") as fh:
        return np.loadtxt(fh, skiprows=1, **kw)


def main(wheel):
    zf = zipfile.ZipFile(wheel)
    imu = _load(zf, "KittiEquivBiasedImu.txt")
    gps = _load(zf, "KittiGps_converted.txt", delimiter=",")
    t_imu = imu[:, 0]
    # 1 Hz GPS -> per-interval velocity at interval midpoints
    mid = (gps[1:, 0] + gps[:-1, 0]) / 2
    vel = np.diff(gps[:, 1:4], axis=0) / np.diff(gps[:, 0])[:, None]
    speed = np.linalg.norm(vel[:, :2], axis=1)
    heading = np.arctan2(vel[:, 1], vel[:, 0])

    lines, stamps = [], []
    yaw = None
    for k in range(FRAMES):
        i = int(np.argmin(np.abs(t_imu - (START + 0.1 * k))))
        t = t_imu[i]
        ax, ay, az, wx, wy, wz = imu[i, 2:8]
        vn, ve, vu = (np.interp(t, mid, vel[:, j]) for j in range(3))
        if yaw is None:
            yaw = float(np.interp(t, mid, np.unwrap(heading)))
        else:
            yaw += wz * (t - stamps[-1])
        yaw = math.atan2(math.sin(yaw), math.cos(yaw))
        roll = math.atan2(ay, az)
        pitch = math.atan2(-ax, math.hypot(ay, az))
        vf = float(np.interp(t, mid, speed))
        fields = [0.0, 0.0, 0.0, roll, pitch, yaw, vn, ve, vf, 0.0, vu,
                  ax, ay, az, ax, ay, az, wx, wy, wz, wx, wy, wz,
                  0.0, 0.0, 4, 0, 0, 0, 0]
        lines.append(" ".join(f"{x:.16g}" for x in fields))
        stamps.append(t)

    (OUT / "oxts" / "data").mkdir(parents=True, exist_ok=True)
    for k, line in enumerate(lines):
        (OUT / "oxts" / "data" / f"{k:010d}.txt").write_text(line + "\n")
    with open(OUT / "oxts" / "timestamps.txt", "w") as fh:
        for t in stamps:
            ns = int(round(t * 1e9))
            whole, frac = divmod(ns, 1_000_000_000)
            hh, rem = divmod(whole, 3600)
            mm, ss = divmod(rem, 60)
            fh.write(f"1970-01-01 {hh:02d}:{mm:02d}:{ss:02d}.{frac:09d}\n")
    calib = OUT / "calib"
    calib.mkdir(parents=True, exist_ok=True)
    (calib / "calib_imu_to_velo.txt").write_text(CALIB_IMU_TO_VELO)
    (calib / "calib_velo_to_cam.txt").write_text(CALIB_VELO_TO_CAM)
    (calib / "calib_cam_to_cam.txt").write_text(CALIB_CAM_TO_CAM)


if __name__ == "__main__":
    main(sys.argv[1])
