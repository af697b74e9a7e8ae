"""Compiled per-pixel loops for field synthesis and colorwheel encoding.

The arithmetic here is written so that the public numpy-level operations and
the fused VMT path share bit-identical results: every term is evaluated in a
fixed association order and no fast-math contraction is enabled.
"""

from __future__ import annotations

import math

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def motion_field(
    width, height, cx, cy, cdx, cdy, fx, fy, fc,
    wx, wy, wz, tx, ty, tz, depth, with_rot, with_trans, u, v,
):
    """Fill ``u``/``v`` with the instantaneous motion field; return max |v|^2.

    Per-axis contributions are summed as ((x + y) + z) within the rotational
    and the translational part, then rotational + translational. Terms that
    depend on a single coordinate are tabulated once; the values are the
    same as evaluating them per pixel.
    """
    a = wx / fc
    b = -(wy / fc)
    # column terms
    xs = np.empty(width)
    ru_x = np.empty(width)
    rv_x = np.empty(width)
    t_x = np.empty(width)
    for col in range(width):
        x = (col - cx) / cdx
        xs[col] = x
        ru_x[col] = (-wy * fx) - (wy / fx) * (x * x)
        rv_x[col] = -wz * x
        t_x[col] = ((-tx * fx) / depth + 0.0) + (tz * x) / depth
    max_sq = 0.0
    for row in range(height):
        y = (row - cy) / cdy
        ru_y = wz * y
        rv_y = wx * fy + (wx / fy) * (y * y)
        t_y = (0.0 + (-ty * fy) / depth) + (tz * y) / depth
        for col in range(width):
            xy = xs[col] * y
            if with_rot:
                uu = (a * xy + ru_x[col]) + ru_y
                vv = (rv_y + b * xy) + rv_x[col]
                if with_trans:
                    uu = uu + t_x[col]
                    vv = vv + t_y
            elif with_trans:
                uu = t_x[col]
                vv = t_y
            else:
                uu = 0.0
                vv = 0.0
            u[row, col] = uu
            v[row, col] = vv
            sq = uu * uu + vv * vv
            max_sq = max(max_sq, sq)
    return max_sq


@numba.njit(cache=True, nogil=True)
def max_sq_magnitude(u, v):
    height, width = u.shape
    best = 0.0
    for row in range(height):
        for col in range(width):
            sq = u[row, col] * u[row, col] + v[row, col] * v[row, col]
            if sq > best:
                best = sq
    return best


@numba.njit(cache=True, nogil=True)
def wheel_inputs(u, v, scale, neg_u, neg_v, rad):
    height, width = u.shape
    for row in range(height):
        for col in range(width):
            a = u[row, col] / scale
            b = v[row, col] / scale
            neg_u[row, col] = -a
            neg_v[row, col] = -b
            rad[row, col] = math.sqrt(a * a + b * b)


@numba.njit(cache=True, nogil=True)
def wheel_blend(rad, angle, wheel, out):
    """Middlebury interpolation between adjacent hue bins, desaturated by radius.

    ``wheel`` holds the bin colors already divided by 255. Radii above 1 are
    clamped to full saturation.
    """
    ncols = wheel.shape[0]
    height, width = rad.shape
    for row in range(height):
        for col in range(width):
            fk = (angle[row, col] / math.pi + 1.0) / 2.0 * (ncols - 1)
            k0 = int(math.floor(fk))
            k1 = k0 + 1
            if k1 == ncols:
                k1 = 0
            frac = fk - k0
            r = rad[row, col]
            if r > 1.0:
                r = 1.0
            for ch in range(3):
                c = (1.0 - frac) * wheel[k0, ch] + frac * wheel[k1, ch]
                c = 1.0 - r * (1.0 - c)
                # c >= 0, so truncation is floor
                out[row, col, ch] = int(255.0 * c)
