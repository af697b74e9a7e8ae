"""Flow rasters: Middlebury .flo, KITTI 16-bit PNG flow, colorwheel RGB."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Optional, Union

import cv2
import numpy as np

from . import _kernels
from .errors import FormatError, ParameterError
from .geometry import MotionField

FLO_MAGIC = 202021.25
_FLO_HEADER = struct.Struct("<fii")
KITTI_OFFSET = 32768
KITTI_SCALE = 64.0
AUTO = "auto"


@dataclass(frozen=True, eq=False)
class FlowImage:
    field: MotionField
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.valid is not None:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != self.field.shape:
                raise ParameterError(f"valid mask {valid.shape} does not match field {self.field.shape}")
            object.__setattr__(self, "valid", valid)

    @property
    def width(self) -> int:
        return self.field.width

    @property
    def height(self) -> int:
        return self.field.height

    def valid_mask(self) -> np.ndarray:
        if self.valid is None:
            return np.ones(self.field.shape, dtype=bool)
        return self.valid


@dataclass(frozen=True, eq=False)
class VmtImage:
    """Colorwheel-encoded motion tensor, (height, width, 3) uint8 in RGB order."""

    rgb: np.ndarray

    def __post_init__(self):
        rgb = np.asarray(self.rgb)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ParameterError(f"expected (H, W, 3) image, got {rgb.shape}")
        if rgb.dtype != np.uint8:
            if rgb.min() < 0 or rgb.max() > 255:
                raise ParameterError("channel values must lie in [0, 255]")
            rgb = rgb.astype(np.uint8)
        object.__setattr__(self, "rgb", rgb)

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    def to_png(self) -> bytes:
        return _encode_png(cv2.cvtColor(self.rgb, cv2.COLOR_RGB2BGR))

    @classmethod
    def from_png(cls, data: bytes) -> "VmtImage":
        img = _decode_png(data)
        if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
            raise FormatError("colorwheel PNG must be 8-bit RGB")
        return cls(cv2.cvtColor(img, cv2.COLOR_BGR2RGB))


# --------------------------------------------------------------------------
# Middlebury .flo

def write_flo(flow: Union[FlowImage, MotionField]) -> bytes:
    """The container has no validity mask; invalid pixels are written as stored."""
    field = flow.field if isinstance(flow, FlowImage) else flow
    data = np.empty((field.height, field.width, 2), dtype="<f4")
    data[..., 0] = field.u
    data[..., 1] = field.v
    return _FLO_HEADER.pack(FLO_MAGIC, field.width, field.height) + data.tobytes()


def read_flo(data: bytes) -> FlowImage:
    if len(data) < _FLO_HEADER.size:
        raise FormatError(f".flo payload too short ({len(data)} bytes)")
    magic, width, height = _FLO_HEADER.unpack_from(data)
    if magic != FLO_MAGIC:
        raise FormatError(f"bad .flo sentinel {magic!r}")
    if width <= 0 or height <= 0:
        raise FormatError(f"nonpositive .flo dimensions {width}x{height}")
    expected = _FLO_HEADER.size + 8 * width * height
    if len(data) != expected:
        raise FormatError(f".flo payload is {len(data)} bytes, expected {expected}")
    arr = np.frombuffer(data, dtype="<f4", offset=_FLO_HEADER.size).reshape(height, width, 2)
    arr = arr.astype(np.float64)
    if not np.isfinite(arr).all():
        raise FormatError(".flo payload contains non-finite values")
    return FlowImage(MotionField(arr[..., 0], arr[..., 1]))


# --------------------------------------------------------------------------
# KITTI 16-bit PNG flow

def _encode_png(img: np.ndarray) -> bytes:
    ok, buf = cv2.imencode(".png", img, [cv2.IMWRITE_PNG_COMPRESSION, 3])
    if not ok:
        raise FormatError("PNG encoding failed")
    return buf.tobytes()


def _decode_png(data: bytes) -> np.ndarray:
    buf = np.frombuffer(data, dtype=np.uint8)
    if not bytes(data[:8]) == b"\x89PNG\r\n\x1a\n":
        raise FormatError("not a PNG stream")
    img = cv2.imdecode(buf, cv2.IMREAD_UNCHANGED)
    if img is None:
        raise FormatError("undecodable PNG stream")
    return img


def kitti_quantize(values: np.ndarray) -> np.ndarray:
    """Flow component -> stored uint16, round-half-up and clamped."""
    stored = np.floor(np.asarray(values, dtype=np.float64) * KITTI_SCALE + 0.5) + KITTI_OFFSET
    return np.clip(stored, 0, 65535).astype(np.uint16)


def write_kitti_flow_png(flow: Union[FlowImage, MotionField]) -> bytes:
    if isinstance(flow, MotionField):
        flow = FlowImage(flow)
    valid = flow.valid_mask()
    rgb = np.zeros((flow.height, flow.width, 3), dtype=np.uint16)
    rgb[..., 0] = np.where(valid, kitti_quantize(flow.field.u), 0)
    rgb[..., 1] = np.where(valid, kitti_quantize(flow.field.v), 0)
    rgb[..., 2] = valid
    return _encode_png(rgb[..., ::-1])


def read_kitti_flow_png(data: bytes) -> FlowImage:
    img = _decode_png(data)
    if img.dtype != np.uint16:
        raise FormatError(f"KITTI flow PNG must be 16-bit, got {img.dtype}")
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError("KITTI flow PNG must have 3 channels")
    rgb = img[..., ::-1].astype(np.float64)
    valid = rgb[..., 2] > 0
    u = np.where(valid, (rgb[..., 0] - KITTI_OFFSET) / KITTI_SCALE, 0.0)
    v = np.where(valid, (rgb[..., 1] - KITTI_OFFSET) / KITTI_SCALE, 0.0)
    return FlowImage(MotionField(u, v), valid)


def read_flow(data: bytes) -> FlowImage:
    """Dispatch on content: .flo sentinel or PNG signature."""
    if bytes(data[:8]) == b"\x89PNG\r\n\x1a\n":
        return read_kitti_flow_png(data)
    return read_flo(data)


# --------------------------------------------------------------------------
# colorwheel

def make_colorwheel() -> np.ndarray:
    """The 55-bin Middlebury color wheel as (55, 3) floats in [0, 255]."""
    RY, YG, GC, CB, BM, MR = 15, 6, 4, 11, 13, 6
    wheel = np.zeros((RY + YG + GC + CB + BM + MR, 3))
    col = 0
    wheel[col:col + RY, 0] = 255
    wheel[col:col + RY, 1] = np.floor(255 * np.arange(RY) / RY)
    col += RY
    wheel[col:col + YG, 0] = 255 - np.floor(255 * np.arange(YG) / YG)
    wheel[col:col + YG, 1] = 255
    col += YG
    wheel[col:col + GC, 1] = 255
    wheel[col:col + GC, 2] = np.floor(255 * np.arange(GC) / GC)
    col += GC
    wheel[col:col + CB, 1] = 255 - np.floor(255 * np.arange(CB) / CB)
    wheel[col:col + CB, 2] = 255
    col += CB
    wheel[col:col + BM, 2] = 255
    wheel[col:col + BM, 0] = np.floor(255 * np.arange(BM) / BM)
    col += BM
    wheel[col:col + MR, 2] = 255 - np.floor(255 * np.arange(MR) / MR)
    wheel[col:col + MR, 0] = 255
    return wheel


COLORWHEEL = make_colorwheel()
_WHEEL_UNIT = COLORWHEEL / 255.0
NCOLS = COLORWHEEL.shape[0]
# angle between adjacent hue bins
BIN_ANGLE = 2.0 * math.pi / (NCOLS - 1)


def encode_arrays(u: np.ndarray, v: np.ndarray, scale: float, scratch=None) -> np.ndarray:
    """Colorwheel RGB for raw arrays divided by ``scale`` (no validation).

    With ``scratch`` (a float64 array shaped like ``u``) the computation runs
    in place and overwrites ``u`` and ``v``.
    """
    if scratch is None:
        neg_u, neg_v, rad = np.empty_like(u), np.empty_like(v), np.empty_like(u)
    else:
        neg_u, neg_v, rad = u, v, scratch
    _kernels.wheel_inputs(u, v, scale, neg_u, neg_v, rad)
    angle = np.arctan2(neg_v, neg_u, out=neg_u)
    out = np.empty(u.shape + (3,), dtype=np.uint8)
    _kernels.wheel_blend(rad, angle, _WHEEL_UNIT, out)
    return out


def colorwheel_encode(field: MotionField, max_magnitude: Union[float, str] = AUTO) -> VmtImage:
    """Encode direction as hue and magnitude/max_magnitude as saturation.

    ``AUTO`` uses the frame's own maximum magnitude. Magnitudes beyond
    ``max_magnitude`` saturate; a zero vector is white.
    """
    if isinstance(max_magnitude, str):
        if max_magnitude != AUTO:
            raise ParameterError(f"unknown max_magnitude mode {max_magnitude!r}")
        scale = field.max_magnitude()
        if scale == 0:
            scale = 1.0
    else:
        scale = float(max_magnitude)
        if not (math.isfinite(scale) and scale > 0):
            raise ParameterError(f"max_magnitude must be positive, got {max_magnitude}")
    return VmtImage(encode_arrays(field.u, field.v, scale))


@dataclass(frozen=True)
class Normalization:
    """Either per-frame-max (``scale is None``) or division by a fixed scale."""

    scale: Optional[float] = None

    def __post_init__(self):
        if self.scale is not None:
            s = float(self.scale)
            if not (math.isfinite(s) and s > 0):
                raise ParameterError(f"fixed normalization scale must be positive, got {self.scale}")
            object.__setattr__(self, "scale", s)

    @classmethod
    def fixed(cls, scale: float) -> "Normalization":
        return cls(scale)

    @classmethod
    def parse(cls, text: str) -> "Normalization":
        text = text.strip().lower()
        if text == AUTO:
            return PER_FRAME_MAX
        if text.startswith("fixed:"):
            try:
                return cls(float(text[len("fixed:"):]))
            except ValueError as exc:
                raise ParameterError(f"bad normalization {text!r}") from exc
        raise ParameterError(f"normalization must be 'auto' or 'fixed:S', got {text!r}")

    @property
    def per_frame(self) -> bool:
        return self.scale is None

    def divisor(self, max_sq: float) -> float:
        if self.scale is not None:
            return self.scale
        m = math.sqrt(max_sq)
        return m if m > 0 else 1.0

    def __str__(self):
        return AUTO if self.scale is None else f"fixed:{self.scale!r}"


PER_FRAME_MAX = Normalization()


def normalize_field(field: MotionField, mode: Normalization = PER_FRAME_MAX) -> MotionField:
    if not isinstance(mode, Normalization):
        mode = Normalization.fixed(mode)
    scale = mode.divisor(_kernels.max_sq_magnitude(field.u, field.v))
    return MotionField(field.u / scale, field.v / scale)


def _hue_sat(rgb_unit: np.ndarray):
    hsv = cv2.cvtColor(rgb_unit.astype(np.float32).reshape(-1, 1, 3), cv2.COLOR_RGB2HSV)
    return hsv[:, 0, 0] / 360.0, hsv[:, 0, 1]


_BIN_HUE, _ = _hue_sat(_WHEEL_UNIT)


def wheel_direction(rgb: np.ndarray):
    """Approximate inverse of the wheel: (direction angle, saturation) per pixel.

    Hue is read back through HSV and mapped onto the bin hue table; the
    angle is that of the motion vector, atan2(v, u). Quantization makes this
    accurate to about one bin, enough to tell motion families apart. White
    pixels get saturation 0 and angle NaN.
    """
    rgb = np.asarray(rgb)
    hue, sat = _hue_sat(rgb.astype(np.float64) / 255.0)
    # bin hues increase monotonically; close the loop back to red
    fk = np.interp(hue, np.append(_BIN_HUE, 1.0), np.arange(NCOLS + 1, dtype=float))
    a = fk / (NCOLS - 1) * 2.0 - 1.0
    # a*pi = atan2(-v, -u), so the motion direction is opposite
    angle = np.angle(-np.exp(1j * math.pi * a))
    angle = np.where(sat > 0, angle, np.nan)
    return angle.reshape(rgb.shape[:-1]), sat.reshape(rgb.shape[:-1])


def rightward_family(rgb: np.ndarray) -> np.ndarray:
    """Pixels whose decoded direction points right (u > 0); NaN-safe."""
    angle, sat = wheel_direction(rgb)
    return (sat > 0) & (np.cos(np.nan_to_num(angle, nan=0.0)) > 0)


def leftward_family(rgb: np.ndarray) -> np.ndarray:
    angle, sat = wheel_direction(rgb)
    return (sat > 0) & (np.cos(np.nan_to_num(angle, nan=0.0)) < 0)
