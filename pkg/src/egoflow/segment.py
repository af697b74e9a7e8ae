"""Ego-motion compensation, residual thresholding and moving/static IoU."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Iterable, Union

import numpy as np
from scipy import ndimage

from .codec import FlowImage, _decode_png, _encode_png
from .errors import FormatError, ParameterError
from .geometry import MotionField

DEFAULT_TAU = 0.5


@dataclass(frozen=True, eq=False)
class Residual:
    """Observed minus predicted motion; invalid pixels carry (0, 0)."""

    field: MotionField
    valid: np.ndarray

    @property
    def shape(self):
        return self.field.shape

    def magnitude(self) -> np.ndarray:
        return self.field.magnitude()


@dataclass(frozen=True, eq=False)
class SegMask:
    moving: np.ndarray

    def __post_init__(self):
        moving = np.asarray(self.moving, dtype=bool)
        if moving.ndim != 2:
            raise ParameterError(f"mask must be 2-D, got shape {moving.shape}")
        object.__setattr__(self, "moving", moving)

    @property
    def width(self) -> int:
        return self.moving.shape[1]

    @property
    def height(self) -> int:
        return self.moving.shape[0]

    def to_png(self) -> bytes:
        return _encode_png(np.where(self.moving, 255, 0).astype(np.uint8))

    @classmethod
    def from_png(cls, data: bytes) -> "SegMask":
        img = _decode_png(data)
        if img.dtype != np.uint8:
            raise FormatError("mask PNG must be 8-bit")
        if img.ndim == 3:
            raise FormatError("mask PNG must be single-channel")
        return cls(img > 127)


def compensate(observed: Union[FlowImage, MotionField], predicted: MotionField) -> Residual:
    """Subtract the predicted ego-motion field from the observed flow."""
    if isinstance(observed, MotionField):
        observed = FlowImage(observed)
    if observed.field.shape != predicted.shape:
        raise ParameterError(f"flow {observed.field.shape} and prediction {predicted.shape} differ in size")
    valid = observed.valid_mask()
    du = np.where(valid, observed.field.u - predicted.u, 0.0)
    dv = np.where(valid, observed.field.v - predicted.v, 0.0)
    return Residual(MotionField(du, dv), valid.copy())


def threshold_segment(residual: Union[Residual, MotionField], tau: float = DEFAULT_TAU,
                      majority: bool = False) -> SegMask:
    """Moving where the residual magnitude exceeds ``tau`` pixels; invalid pixels are static."""
    if not (math.isfinite(tau) and tau >= 0):
        raise ParameterError(f"tau must be nonnegative, got {tau}")
    if isinstance(residual, MotionField):
        residual = Residual(residual, np.ones(residual.shape, dtype=bool))
    moving = (residual.magnitude() > tau) & residual.valid
    if majority:
        moving = majority_filter(moving)
    return SegMask(moving)


def majority_filter(mask: np.ndarray) -> np.ndarray:
    """3x3 majority vote; out-of-image neighbors count as static."""
    votes = ndimage.convolve(mask.astype(np.uint8), np.ones((3, 3), np.uint8), mode="constant", cval=0)
    return votes >= 5


@dataclass(frozen=True)
class EvalReport:
    moving_iou: float
    static_iou: float
    mean_iou: float
    moving_tp: int
    moving_fp: int
    moving_fn: int
    static_tp: int
    static_fp: int
    static_fn: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int) -> "EvalReport":
        """Counts are for the moving class; the static class mirrors them."""
        def iou(a, b, c):
            denom = a + b + c
            return a / denom if denom else 1.0

        moving = iou(tp, fp, fn)
        static = iou(tn, fn, fp)
        return cls(moving, static, (moving + static) / 2, tp, fp, fn, tn, fn, fp)

    def as_dict(self) -> Dict[str, Union[int, float]]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_keyvalue(self) -> str:
        return "".join(f"{k}={v!r}\n" for k, v in self.as_dict().items())

    def to_text(self, title: str = "") -> str:
        head = f"{title}: " if title else ""
        return (f"{head}moving IoU {self.moving_iou:.4f}  static IoU {self.static_iou:.4f}  "
                f"mIoU {self.mean_iou:.4f}  (tp={self.moving_tp} fp={self.moving_fp} fn={self.moving_fn})\n")


def _counts(pred: SegMask, gt: SegMask):
    if pred.moving.shape != gt.moving.shape:
        raise ParameterError(f"mask sizes differ: {pred.moving.shape} vs {gt.moving.shape}")
    p, g = pred.moving, gt.moving
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(p.size - tp - fp - fn)
    return tp, fp, fn, tn


def evaluate(pred: SegMask, gt: SegMask) -> EvalReport:
    """IoU of the moving class, of the static class, and their unweighted mean.

    A class absent from both masks scores IoU 1.
    """
    return EvalReport.from_counts(*_counts(pred, gt))


def evaluate_many(pairs: Iterable) -> EvalReport:
    """Dataset-level report from summed pixel counts, reduced in the given order."""
    tp = fp = fn = tn = 0
    for pred, gt in pairs:
        a, b, c, d = _counts(pred, gt)
        tp, fp, fn, tn = tp + a, fp + b, fn + c, tn + d
    return EvalReport.from_counts(tp, fp, fn, tn)


# --------------------------------------------------------------------------
# key=value files (reports and CLI config share the grammar)

def parse_keyvalue(text: str) -> Dict[str, str]:
    """``key=value`` per line; blank lines and ``#`` comments ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def read_report(path) -> EvalReport:
    kv = parse_keyvalue(Path(path).read_text())
    kwargs = {}
    for f in fields(EvalReport):
        if f.name not in kv:
            raise FormatError(f"{path}: missing {f.name}")
        kwargs[f.name] = (float if f.type in ("float", float) else int)(kv[f.name])
    return EvalReport(**kwargs)
