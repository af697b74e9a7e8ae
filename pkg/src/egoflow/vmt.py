"""Vehicle Motion Tensor generation and per-component diagnostics."""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Optional, Tuple

import numpy as np

from .codec import PER_FRAME_MAX, Normalization, VmtImage, colorwheel_encode, encode_arrays, normalize_field
from .errors import FormatError, ParameterError
from .geometry import CameraIntrinsics, DepthModel, EgoMotion, MotionField, ego_field, ego_field_arrays

COMPONENTS = ("rot_x", "rot_y", "rot_z", "trans_x", "trans_y", "trans_z")
NONE = "none"

TENSOR_MAGIC = b"VMT1"
_TENSOR_HEADER = struct.Struct("<4siii")


_scratch = threading.local()


def _workspace(shape) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-thread float64 buffers, reused while the frame size stays the same."""
    bufs = getattr(_scratch, "bufs", None)
    if bufs is None or bufs[0].shape != shape:
        bufs = tuple(np.empty(shape) for _ in range(3))
        _scratch.bufs = bufs
    return bufs


def build_vmt(intr: CameraIntrinsics, ego: EgoMotion, depth: DepthModel = DepthModel(),
              norm: Normalization = PER_FRAME_MAX) -> VmtImage:
    """Colorwheel VMT for one frame.

    Same bytes as ``colorwheel_encode(normalize_field(ego_field(...), norm), 1.0)``,
    computed in reused buffers without intermediate fields.
    """
    u, v, rad = _workspace(intr.shape)
    _, _, max_sq = ego_field_arrays(intr, ego, depth, out=(u, v))
    return VmtImage(encode_arrays(u, v, norm.divisor(max_sq), scratch=rad))


def single_component(ego: EgoMotion, name: str) -> EgoMotion:
    """``ego`` with every motion parameter except ``name`` set to zero."""
    k = COMPONENTS.index(name)
    params = [0.0] * 6
    params[k] = (ego.omega + ego.translation)[k]
    return EgoMotion(tuple(params[:3]), tuple(params[3:]), ego.frame_interval)


@dataclass(frozen=True, eq=False)
class Decomposition:
    fields: Dict[str, MotionField]
    images: Dict[str, VmtImage]

    def total(self) -> MotionField:
        """Sum of the six components, rotations and translations grouped as in ego_field."""
        f = self.fields

        def add(a, b):
            return a[0] + b[0], a[1] + b[1]

        def uv(name):
            return f[name].u, f[name].v

        rot = add(add(uv("rot_x"), uv("rot_y")), uv("rot_z"))
        trans = add(add(uv("trans_x"), uv("trans_y")), uv("trans_z"))
        return MotionField(*add(rot, trans))

    def planes(self) -> np.ndarray:
        """(12, H, W) float32 stack: u then v for each component in COMPONENTS order."""
        out = []
        for name in COMPONENTS:
            out.extend([self.fields[name].u, self.fields[name].v])
        return np.stack(out).astype(np.float32)


def decompose_vmt(intr: CameraIntrinsics, ego: EgoMotion, depth: DepthModel = DepthModel(),
                  norm: Normalization = PER_FRAME_MAX) -> Decomposition:
    fields = {}
    images = {}
    for name in COMPONENTS:
        field = ego_field(intr, single_component(ego, name), depth)
        fields[name] = field
        images[name] = colorwheel_encode(normalize_field(field, norm), 1.0)
    return Decomposition(fields, images)


@dataclass(frozen=True)
class DominantReport:
    component: str
    fractions: Tuple[Tuple[str, float], ...]

    def fraction(self, name: str) -> float:
        return dict(self.fractions)[name]


def dominant_component(decomposition) -> DominantReport:
    """Component with the largest mean squared field magnitude, with energy fractions.

    Accepts a :class:`Decomposition` or a mapping of component name to field.
    """
    fields: Mapping[str, MotionField] = getattr(decomposition, "fields", decomposition)
    energy = {name: float(np.mean(fields[name].u ** 2 + fields[name].v ** 2)) for name in COMPONENTS}
    total = sum(energy.values())
    if total == 0:
        return DominantReport(NONE, tuple((name, 0.0) for name in COMPONENTS))
    best = max(COMPONENTS, key=lambda name: energy[name])
    return DominantReport(best, tuple((name, energy[name] / total) for name in COMPONENTS))


def calibrate_scale(fields: Iterable[MotionField], percentile: float = 98.0) -> Optional[float]:
    """Fixed normalization scale: the given percentile of per-pixel magnitude over ``fields``.

    Returns None when every field is zero (no usable scale).
    """
    mags = [f.magnitude().ravel() for f in fields]
    if not mags:
        return None
    value = float(np.percentile(np.concatenate(mags), percentile))
    return value if value > 0 else None


# --------------------------------------------------------------------------
# raw tensor dump

def write_tensor(planes: np.ndarray) -> bytes:
    """16-byte header (magic, channels, width, height) + float32 LE planes, channel-major."""
    planes = np.asarray(planes)
    if planes.ndim == 2:
        planes = planes[None]
    if planes.ndim != 3:
        raise ParameterError(f"expected (C, H, W) planes, got shape {planes.shape}")
    c, h, w = planes.shape
    return _TENSOR_HEADER.pack(TENSOR_MAGIC, c, w, h) + planes.astype("<f4").tobytes()


def read_tensor(data: bytes) -> np.ndarray:
    if len(data) < _TENSOR_HEADER.size:
        raise FormatError("tensor payload shorter than its header")
    magic, c, w, h = _TENSOR_HEADER.unpack_from(data)
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}")
    if c <= 0 or w <= 0 or h <= 0:
        raise FormatError(f"bad tensor shape ({c}, {h}, {w})")
    expected = _TENSOR_HEADER.size + 4 * c * w * h
    if len(data) != expected:
        raise FormatError(f"tensor payload is {len(data)} bytes, expected {expected}")
    return np.frombuffer(data, dtype="<f4", offset=_TENSOR_HEADER.size).reshape(c, h, w).copy()


def field_planes(field: MotionField) -> np.ndarray:
    return np.stack([field.u, field.v])
