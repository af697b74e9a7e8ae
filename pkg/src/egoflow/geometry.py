"""Closed-form motion fields induced by camera ego-motion.

Pixel coordinates are centered at the principal point, x to the right and
y downward, focal lengths in pixels. ``omega`` and ``translation`` describe the
camera's own motion over one frame, expressed in the camera frame (x right,
y down, z forward), so a camera yawing to the right (omega_y > 0) makes the
scene drift left and forward motion (T_z > 0) makes it expand.

Fields follow the t-1 -> t convention used for optical flow throughout the
package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from . import _kernels
from .errors import ParameterError

Vec3 = Tuple[float, float, float]


@dataclass(frozen=True)
class CameraIntrinsics:
    focal_x: float
    focal_y: float
    principal_x: float
    principal_y: float
    width: int
    height: int

    def __post_init__(self):
        for name in ("focal_x", "focal_y", "principal_x", "principal_y"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ParameterError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ParameterError("width and height must be integers")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if self.width < 1 or self.height < 1:
            raise ParameterError(f"image size must be positive, got {self.width}x{self.height}")
        if self.focal_x <= 0 or self.focal_y <= 0:
            raise ParameterError("focal lengths must be positive")
        if not 0 <= self.principal_x < self.width:
            raise ParameterError(f"principal_x={self.principal_x} outside [0, {self.width})")
        if not 0 <= self.principal_y < self.height:
            raise ParameterError(f"principal_y={self.principal_y} outside [0, {self.height})")

    @classmethod
    def from_matrix(cls, K, width: int, height: int) -> "CameraIntrinsics":
        K = np.asarray(K, dtype=float)
        return cls(K[0, 0], K[1, 1], K[0, 2], K[1, 2], width, height)

    def matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.focal_x, 0.0, self.principal_x],
                [0.0, self.focal_y, self.principal_y],
                [0.0, 0.0, 1.0],
            ]
        )

    @property
    def cross_focal(self) -> float:
        """Focal length used by the x*y cross terms (geometric mean when anisotropic)."""
        if self.focal_x == self.focal_y:
            return self.focal_x
        return math.sqrt(self.focal_x * self.focal_y)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)


def _vec3(values, name: str) -> Vec3:
    arr = tuple(float(x) for x in values)
    if len(arr) != 3:
        raise ParameterError(f"{name} must have 3 components, got {len(arr)}")
    if not all(math.isfinite(x) for x in arr):
        raise ParameterError(f"{name} must be finite, got {arr}")
    return arr  # type: ignore[return-value]


@dataclass(frozen=True)
class EgoMotion:
    """Per-frame camera motion: rotation vector (rad) and translation (m)."""

    omega: Vec3 = (0.0, 0.0, 0.0)
    translation: Vec3 = (0.0, 0.0, 0.0)
    frame_interval: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "omega", _vec3(self.omega, "omega"))
        object.__setattr__(self, "translation", _vec3(self.translation, "translation"))
        if self.frame_interval is not None:
            dt = float(self.frame_interval)
            if not (math.isfinite(dt) and dt > 0):
                raise ParameterError(f"frame_interval must be positive, got {dt}")
            object.__setattr__(self, "frame_interval", dt)

    @classmethod
    def from_rates(cls, angular_rate: Sequence[float], velocity: Sequence[float], dt: float) -> "EgoMotion":
        """Build from rad/s and m/s rates by integrating over ``dt`` seconds."""
        if not dt > 0:
            raise ParameterError(f"dt must be positive, got {dt}")
        return cls(
            tuple(w * dt for w in angular_rate),
            tuple(t * dt for t in velocity),
            frame_interval=dt,
        )

    def is_zero(self) -> bool:
        return not any(self.omega) and not any(self.translation)


@dataclass(frozen=True)
class DepthModel:
    constant_depth: float = 10.0

    def __post_init__(self):
        z = float(self.constant_depth)
        if not (math.isfinite(z) and z > 0):
            raise ParameterError(f"constant_depth must be positive and finite, got {z}")
        object.__setattr__(self, "constant_depth", z)


@dataclass(frozen=True, eq=False)
class MotionField:
    """Dense (height, width) grids of horizontal and vertical pixel motion."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.ndim != 2 or u.shape != v.shape:
            raise ParameterError(f"u and v must be matching 2-D grids, got {u.shape} and {v.shape}")
        if u.size == 0:
            raise ParameterError("motion field must have at least one pixel")
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise ParameterError("motion field contains non-finite values")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def zeros(cls, width: int, height: int) -> "MotionField":
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    @classmethod
    def uniform(cls, width: int, height: int, u: float, v: float) -> "MotionField":
        return cls(np.full((height, width), float(u)), np.full((height, width), float(v)))

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.u.shape

    def magnitude(self) -> np.ndarray:
        return np.sqrt(self.u * self.u + self.v * self.v)

    def max_magnitude(self) -> float:
        return math.sqrt(_kernels.max_sq_magnitude(self.u, self.v))

    def stacked(self) -> np.ndarray:
        """(height, width, 2) array with u in channel 0."""
        return np.stack([self.u, self.v], axis=-1)

    def equals(self, other: "MotionField") -> bool:
        return np.array_equal(self.u, other.u) and np.array_equal(self.v, other.v)

    def __neg__(self) -> "MotionField":
        return MotionField(-self.u, -self.v)


def _run(intr: CameraIntrinsics, omega: Vec3, translation: Vec3, depth: float,
         with_rot: bool, with_trans: bool, normalized: bool, out=None):
    if not isinstance(intr, CameraIntrinsics):
        raise ParameterError("intrinsics must be a CameraIntrinsics")
    if normalized:
        # image-plane units: coordinates divided by f, unit focal length
        cdx, cdy, fx, fy, fc = intr.focal_x, intr.focal_y, 1.0, 1.0, 1.0
    else:
        cdx, cdy = 1.0, 1.0
        fx, fy, fc = intr.focal_x, intr.focal_y, intr.cross_focal
    u, v = out if out is not None else (np.empty(intr.shape), np.empty(intr.shape))
    max_sq = _kernels.motion_field(
        intr.width, intr.height, intr.principal_x, intr.principal_y, cdx, cdy,
        fx, fy, fc, omega[0], omega[1], omega[2],
        translation[0], translation[1], translation[2], depth,
        with_rot, with_trans, u, v,
    )
    return u, v, max_sq


def rotational_field(intr: CameraIntrinsics, omega, normalized: bool = False) -> MotionField:
    """Motion field of a pure camera rotation; independent of scene depth."""
    omega = _vec3(omega, "omega")
    u, v, _ = _run(intr, omega, (0.0, 0.0, 0.0), 1.0, True, False, normalized)
    return MotionField(u, v)


def translational_field(intr: CameraIntrinsics, translation, depth: DepthModel = DepthModel(),
                        normalized: bool = False) -> MotionField:
    """Motion field of a pure camera translation against a fronto-parallel plane."""
    translation = _vec3(translation, "translation")
    if not isinstance(depth, DepthModel):
        depth = DepthModel(depth)
    u, v, _ = _run(intr, (0.0, 0.0, 0.0), translation, depth.constant_depth, False, True, normalized)
    return MotionField(u, v)


def compose_field(rot: MotionField, trans: MotionField) -> MotionField:
    if rot.shape != trans.shape:
        raise ParameterError(f"field dimensions differ: {rot.shape} vs {trans.shape}")
    return MotionField(rot.u + trans.u, rot.v + trans.v)


def ego_field_arrays(intr: CameraIntrinsics, ego: EgoMotion, depth: DepthModel = DepthModel(),
                     normalized: bool = False, out=None):
    """Raw (u, v, max squared magnitude) for the full ego field, skipping validation.

    ``out`` optionally supplies the two float64 (height, width) arrays to fill.
    """
    return _run(intr, ego.omega, ego.translation, depth.constant_depth, True, True, normalized, out)


def ego_field(intr: CameraIntrinsics, ego: EgoMotion, depth: DepthModel = DepthModel(),
              normalized: bool = False) -> MotionField:
    """Rotational plus translational field for ``ego`` at a constant scene depth.

    Identical, bit for bit, to ``compose_field(rotational_field(...),
    translational_field(...))``.
    """
    if not isinstance(depth, DepthModel):
        depth = DepthModel(depth)
    u, v, _ = ego_field_arrays(intr, ego, depth, normalized)
    return MotionField(u, v)


def pixel_grid(intr: CameraIntrinsics):
    """Principal-point-centered (x, y) coordinate grids, each (height, width)."""
    x = np.arange(intr.width, dtype=float) - intr.principal_x
    y = np.arange(intr.height, dtype=float) - intr.principal_y
    return np.meshgrid(x, y)
