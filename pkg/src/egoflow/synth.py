"""Synthetic scenes with exact ground-truth flow and moving-object masks.

Flow is rendered by back-projecting every source pixel with its depth,
moving the 3-D point (object velocity, then the inverse camera motion with
the exact rotation matrix) and re-projecting. This is deliberately a
different computation from the closed-form fields in :mod:`egoflow.geometry`,
which are first-order in the motion.

Scene text format, one scene per block::

    scene <name> <kind>
    camera <fx> <fy> <cx> <cy> <width> <height>
    omega <wx> <wy> <wz>
    translation <tx> <ty> <tz>
    interval <seconds>                                  (optional)
    background <depth>
    object <x0> <y0> <x1> <y1> <depth> <vx> <vy> <vz>   (zero or more)
    end

Rectangles are pixel ranges [x0, x1) x [y0, y1). Blank lines and ``#``
comments are ignored; numbers round-trip exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

from .codec import FlowImage
from .errors import FormatError, ParameterError
from .geometry import CameraIntrinsics, EgoMotion, MotionField
from .segment import SegMask

SYNTH_DT = 0.125
MAX_OMEGA = 0.02
MAX_TRANSLATION = 0.2
KINDS = ("forward", "yaw", "mixed", "parallax")


@dataclass(frozen=True)
class SceneObject:
    x0: int
    y0: int
    x1: int
    y1: int
    depth: float
    velocity: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ParameterError(f"empty object rectangle {self}")
        if not (math.isfinite(self.depth) and self.depth > 0):
            raise ParameterError(f"object depth must be positive, got {self.depth}")
        object.__setattr__(self, "velocity", tuple(float(x) for x in self.velocity))

    @property
    def moving(self) -> bool:
        return any(self.velocity)


@dataclass(frozen=True, eq=False)
class SceneSpec:
    intr: CameraIntrinsics
    ego: EgoMotion
    background_depth: Union[float, np.ndarray] = 10.0
    objects: Tuple[SceneObject, ...] = ()
    name: str = "scene"
    kind: str = "mixed"

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        bg = self.background_depth
        if np.ndim(bg) == 0:
            bg = float(bg)
            if not (math.isfinite(bg) and bg > 0):
                raise ParameterError(f"background depth must be positive, got {bg}")
        else:
            bg = np.asarray(bg, dtype=float)
            if bg.shape != self.intr.shape:
                raise ParameterError(f"depth grid {bg.shape} does not match image {self.intr.shape}")
            if not (np.isfinite(bg).all() and (bg > 0).all()):
                raise ParameterError("depth grid must be positive and finite")
        object.__setattr__(self, "background_depth", bg)
        for obj in self.objects:
            if obj.x0 < 0 or obj.y0 < 0 or obj.x1 > self.intr.width or obj.y1 > self.intr.height:
                raise ParameterError(f"object {obj} outside the {self.intr.width}x{self.intr.height} image")

    @property
    def plane_depth(self) -> Optional[float]:
        return self.background_depth if isinstance(self.background_depth, float) else None


def layout(scene: SceneSpec):
    """Per-pixel (depth, velocity (H, W, 3), owning object index or -1); nearest depth wins."""
    h, w = scene.intr.shape
    depth = np.broadcast_to(scene.background_depth, (h, w)).astype(float).copy()
    owner = np.full((h, w), -1, dtype=int)
    velocity = np.zeros((h, w, 3))
    for i, obj in enumerate(scene.objects):
        region = (slice(obj.y0, obj.y1), slice(obj.x0, obj.x1))
        closer = obj.depth < depth[region]
        depth[region] = np.where(closer, obj.depth, depth[region])
        owner[region] = np.where(closer, i, owner[region])
        velocity[region] = np.where(closer[..., None], obj.velocity, velocity[region])
    return depth, velocity, owner


def render_flow(scene: SceneSpec, noise: float = 0.0, seed: int = 0) -> Tuple[FlowImage, SegMask]:
    """Exact t-1 -> t displacement flow and moving mask for ``scene``.

    Pixels whose point ends behind the camera or re-projects outside the
    image are invalid (flow 0). ``noise`` adds seeded Gaussian noise (px)
    to valid pixels.
    """
    intr = scene.intr
    h, w = intr.shape
    depth, velocity, owner = layout(scene)
    rows, cols = np.mgrid[0:h, 0:w].astype(float)
    ray_x = (cols - intr.principal_x) / intr.focal_x
    ray_y = (rows - intr.principal_y) / intr.focal_y
    # work in units of depth: p / Z = ray + (V - T) / Z, so a pure rotation
    # never sees Z and renders bit-identically at any depth
    shift = (velocity - np.asarray(scene.ego.translation)) / depth[..., None]
    rays = np.stack([ray_x, ray_y, np.ones_like(ray_x)], axis=-1)
    R = Rotation.from_rotvec(scene.ego.omega).as_matrix()
    # camera at t sits at T with axes R in the t-1 frame: p_t = R^T (p + V - T)
    moved = (rays + shift) @ R
    z = moved[..., 2]
    in_front = z > 0
    safe_z = np.where(in_front, z, 1.0)
    # difference against the ray so an unmoved point gives exactly zero flow
    u = intr.focal_x * (moved[..., 0] / safe_z - ray_x)
    v = intr.focal_y * (moved[..., 1] / safe_z - ray_y)
    x_new, y_new = cols + u, rows + v
    valid = in_front & (x_new >= 0) & (x_new <= w - 1) & (y_new >= 0) & (y_new <= h - 1)
    u = np.where(valid, u, 0.0)
    v = np.where(valid, v, 0.0)
    if noise > 0:
        rng = np.random.default_rng(seed)
        u = np.where(valid, u + rng.normal(0.0, noise, u.shape), 0.0)
        v = np.where(valid, v + rng.normal(0.0, noise, v.shape), 0.0)
    moving = (owner >= 0) & np.any(velocity != 0, axis=-1)
    return FlowImage(MotionField(u, v), valid), SegMask(moving)


def cancelling_velocity(ego: EgoMotion, object_depth: float, mimic_depth: Optional[float] = None):
    """Object velocity that makes the object's flow equal that of a static point.

    With ``mimic_depth`` the object at ``object_depth`` reproduces, exactly, the
    flow of static scene points at ``mimic_depth`` along the same rays:
    back-projection gives p_obj = (Z_obj / Z_mimic) p_static, and
    p_obj + V - T = k (p_static - T) holds for every ray when V = (1 - k) T.
    Without it the object simply moves with the camera (V = T), which leaves
    it with zero flow under pure translation.
    """
    T = np.asarray(ego.translation)
    if mimic_depth is None:
        return tuple(T)
    k = object_depth / mimic_depth
    return tuple((1.0 - k) * T)


# --------------------------------------------------------------------------
# suite generation

def _cap(vec: np.ndarray, limit: float) -> np.ndarray:
    n = float(np.linalg.norm(vec))
    return vec * (limit / n) if n > limit else vec


def _random_camera(rng) -> CameraIntrinsics:
    width = int(rng.integers(20, 41)) * 8
    height = int(rng.integers(8, 17)) * 8
    f = width * rng.uniform(0.55, 0.75)
    cx = (width - 1) / 2 + rng.uniform(-4, 4)
    cy = (height - 1) / 2 + rng.uniform(-3, 3)
    return CameraIntrinsics(f, f, cx, cy, width, height)


def _random_ego(rng, kind: str) -> EgoMotion:
    if kind in ("forward", "parallax"):
        omega = rng.uniform(-0.002, 0.002, 3)
        trans = np.array([rng.uniform(-0.02, 0.02), rng.uniform(-0.01, 0.01), rng.uniform(0.12, 0.19)])
    elif kind == "yaw":
        wy = rng.choice([-1.0, 1.0]) * rng.uniform(0.01, 0.019)
        other = abs(wy) / 6
        omega = np.array([rng.uniform(-other, other), wy, rng.uniform(-other, other)])
        trans = np.array([rng.uniform(-0.02, 0.02), rng.uniform(-0.01, 0.01), rng.uniform(0.03, 0.15)])
    elif kind == "mixed":
        d = rng.normal(size=3)
        omega = d / np.linalg.norm(d) * rng.uniform(0.003, 0.019)
        d = rng.normal(size=3)
        trans = d / np.linalg.norm(d) * rng.uniform(0.05, 0.19)
    else:
        raise ParameterError(f"unknown scene kind {kind!r}")
    return EgoMotion(tuple(_cap(omega, MAX_OMEGA)), tuple(_cap(trans, MAX_TRANSLATION)), SYNTH_DT)


def _overlaps(a: SceneObject, b: SceneObject) -> bool:
    return a.x0 < b.x1 and b.x0 < a.x1 and a.y0 < b.y1 and b.y0 < a.y1


def _place_mover(rng, scene: SceneSpec, static_flow: FlowImage, min_residual: float) -> Optional[SceneObject]:
    intr = scene.intr
    w, h = intr.width, intr.height
    bg = scene.background_depth
    for _ in range(200):
        ow = int(rng.integers(max(4, w // 10), w // 5 + 1))
        oh = int(rng.integers(max(4, h // 6), h // 3 + 1))
        mx, my = int(0.12 * w), int(0.15 * h)
        x0 = int(rng.integers(mx, w - mx - ow + 1))
        y0 = int(rng.integers(my, h - my - oh + 1))
        depth = bg * rng.uniform(0.3, 0.9)
        d = np.array([rng.uniform(-1, 1), rng.uniform(-0.2, 0.2), rng.uniform(-1, 1)])
        speed = rng.uniform(2.5, 6.0) * depth / intr.focal_x
        obj = SceneObject(x0, y0, x0 + ow, y0 + oh, depth, tuple(d / np.linalg.norm(d) * speed))
        if any(_overlaps(obj, other) for other in scene.objects):
            continue
        flow, _ = render_flow(replace(scene, objects=(obj,)))
        region = (slice(obj.y0, obj.y1), slice(obj.x0, obj.x1))
        if not flow.valid[region].all():
            continue
        du = flow.field.u[region] - static_flow.field.u[region]
        dv = flow.field.v[region] - static_flow.field.v[region]
        if np.hypot(du, dv).min() >= min_residual:
            return obj
    return None


def make_scene(seed: int, index: int, kind: str, movers: bool = True,
               min_residual: float = 1.5) -> SceneSpec:
    rng = np.random.default_rng([seed, index])
    intr = _random_camera(rng)
    ego = _random_ego(rng, kind)
    bg = float(rng.uniform(10.0, 40.0))
    scene = SceneSpec(intr, ego, bg, (), name=f"scene_{index:04d}", kind=kind)
    if kind == "parallax":
        w, h = intr.width, intr.height
        depth = bg * 0.5
        obj = SceneObject(w // 3, h // 3, w // 3 + max(4, w // 5), h // 3 + max(4, h // 4), depth,
                          cancelling_velocity(ego, depth, bg))
        return replace(scene, objects=(obj,))
    if not movers:
        return scene
    static_flow, _ = render_flow(scene)
    for _ in range(int(rng.integers(1, 6))):
        obj = _place_mover(rng, scene, static_flow, min_residual)
        if obj is not None:
            scene = replace(scene, objects=scene.objects + (obj,))
    if not scene.objects:
        raise RuntimeError(f"could not place a mover in scene {index} (seed {seed})")
    return scene


def suite_kind(index: int, movers: bool = True) -> str:
    if movers and index == 3:
        return "parallax"
    return KINDS[index % 3]


def make_suite(seed: int, count: int, movers: bool = True) -> List[SceneSpec]:
    """Seeded scenes cycling forward / yaw / mixed motion.

    With ``movers`` each scene carries 1-5 independently moving rectangles
    whose residual against the static background is at least 1.5 px on every
    pixel, and scene 3 is the parallax-ambiguity case: a single object whose
    motion mimics the static background. Scene i depends only on (seed, i).
    """
    if count < 1:
        raise ParameterError(f"count must be at least 1, got {count}")
    return [make_scene(seed, i, suite_kind(i, movers), movers) for i in range(count)]


# --------------------------------------------------------------------------
# text format

def _num(x) -> str:
    return repr(float(x))


def dump_scene(scene: SceneSpec) -> str:
    if scene.plane_depth is None:
        raise ParameterError("per-pixel depth grids cannot be written to the text format")
    i = scene.intr
    lines = [
        f"scene {scene.name} {scene.kind}",
        f"camera {_num(i.focal_x)} {_num(i.focal_y)} {_num(i.principal_x)} {_num(i.principal_y)} {i.width} {i.height}",
        "omega " + " ".join(_num(x) for x in scene.ego.omega),
        "translation " + " ".join(_num(x) for x in scene.ego.translation),
    ]
    if scene.ego.frame_interval is not None:
        lines.append(f"interval {_num(scene.ego.frame_interval)}")
    lines.append(f"background {_num(scene.background_depth)}")
    for o in scene.objects:
        lines.append(f"object {o.x0} {o.y0} {o.x1} {o.y1} {_num(o.depth)} " + " ".join(_num(x) for x in o.velocity))
    lines.append("end")
    return "\n".join(lines) + "\n"


def dump_suite(scenes: Sequence[SceneSpec]) -> str:
    return "# egoflow scene suite v1\n" + "".join(dump_scene(s) for s in scenes)


_ARITY = {"camera": 6, "omega": 3, "translation": 3, "interval": 1, "background": 1, "object": 8}


def load_suite(text: str) -> List[SceneSpec]:
    scenes = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *args = line.split()
        where = f"line {lineno}"
        if key == "scene":
            if current is not None:
                raise FormatError(f"{where}: 'scene' before 'end'")
            if len(args) != 2:
                raise FormatError(f"{where}: scene takes <name> <kind>")
            current = {"name": args[0], "kind": args[1], "objects": []}
            continue
        if current is None:
            raise FormatError(f"{where}: {key!r} outside a scene block")
        if key == "end":
            try:
                cam = current["camera"]
                intr = CameraIntrinsics(*cam[:4], int(cam[4]), int(cam[5]))
                ego = EgoMotion(tuple(current["omega"]), tuple(current["translation"]),
                                current["interval"][0] if "interval" in current else None)
                objects = tuple(SceneObject(int(o[0]), int(o[1]), int(o[2]), int(o[3]), o[4], tuple(o[5:]))
                                for o in current["objects"])
                scenes.append(SceneSpec(intr, ego, current["background"][0], objects,
                                        current["name"], current["kind"]))
            except KeyError as exc:
                raise FormatError(f"{where}: scene {current['name']} lacks {exc.args[0]!r}") from None
            except ParameterError as exc:
                raise FormatError(f"{where}: {exc}") from None
            current = None
            continue
        if key not in _ARITY:
            raise FormatError(f"{where}: unknown key {key!r}")
        if len(args) != _ARITY[key]:
            raise FormatError(f"{where}: {key} takes {_ARITY[key]} values, got {len(args)}")
        try:
            values = [float(a) for a in args]
        except ValueError:
            raise FormatError(f"{where}: non-numeric value in {line!r}") from None
        if key == "object":
            current["objects"].append(values)
        else:
            current[key] = values
    if current is not None:
        raise FormatError("unterminated scene block")
    return scenes
