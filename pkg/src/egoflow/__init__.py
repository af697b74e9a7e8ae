"""Ego-motion fields, VMT images and motion-compensated segmentation."""

from .errors import FormatError, ParameterError, ParseError
from .geometry import (
    CameraIntrinsics, DepthModel, EgoMotion, MotionField,
    compose_field, ego_field, rotational_field, translational_field,
)

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics", "DepthModel", "EgoMotion", "MotionField",
    "FormatError", "ParameterError", "ParseError",
    "compose_field", "ego_field", "rotational_field", "translational_field",
]
