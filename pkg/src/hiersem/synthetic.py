"""Ray-cast RGBD scenes of planes, boxes and spheres with exact ground truth.

World frame is the unpitched camera frame (x right, y down, z forward);
the camera sits at the origin pitched down by ``pitch_deg``.  Boxes are
axis-aligned in the world frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigError
from .geometry import CameraIntrinsics
from .normals import NormalMap

SYNTH_CLASSES = ("floor", "furniture", "props")

_LIGHT = np.array([0.3, -1.0, -0.5]) / np.linalg.norm([0.3, -1.0, -0.5])


@dataclass
class Plane:
    point: tuple
    normal: tuple
    color: tuple = (128, 128, 128)
    class_id: int = 0
    instance_id: int = 0


@dataclass
class Box:
    center: tuple
    size: tuple
    color: tuple = (128, 128, 128)
    class_id: int = 0
    instance_id: int = 0


@dataclass
class Sphere:
    center: tuple
    radius: float
    color: tuple = (128, 128, 128)
    class_id: int = 0
    instance_id: int = 0


_KINDS = {"plane": Plane, "box": Box, "sphere": Sphere}


@dataclass
class SceneSpec:
    width: int = 160
    height: int = 120
    intrinsics: CameraIntrinsics = field(default_factory=lambda: CameraIntrinsics(131.25, 131.25, 79.5, 59.5))
    primitives: list = field(default_factory=list)
    pitch_deg: float = 0.0
    max_range: float = 8.0
    depth_sigma: float = 0.0
    color_sigma: float = 0.0
    seed: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "SceneSpec":
        doc = dict(doc)
        prims = []
        for p in doc.pop("primitives", []):
            p = dict(p)
            kind = p.pop("type", None)
            if kind not in _KINDS:
                raise ConfigError(f"unknown primitive type {kind!r}")
            prims.append(_KINDS[kind](**p))
        if "intrinsics" in doc:
            doc["intrinsics"] = CameraIntrinsics(**doc["intrinsics"])
        noise = doc.pop("noise", {}) or {}
        doc.setdefault("depth_sigma", noise.get("depth_sigma", 0.0))
        doc.setdefault("color_sigma", noise.get("color_sigma", 0.0))
        try:
            return cls(primitives=prims, **doc)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    def to_dict(self) -> dict:
        k = self.intrinsics
        prims = []
        for p in self.primitives:
            kind = next(n for n, c in _KINDS.items() if isinstance(p, c))
            d = {"type": kind}
            d.update({f: _plain(getattr(p, f)) for f in p.__dataclass_fields__})
            prims.append(d)
        return {
            "width": self.width,
            "height": self.height,
            "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "depth_scale": k.depth_scale},
            "pitch_deg": self.pitch_deg,
            "max_range": self.max_range,
            "noise": {"depth_sigma": self.depth_sigma, "color_sigma": self.color_sigma},
            "seed": self.seed,
            "primitives": prims,
        }

    @classmethod
    def load(cls, path) -> "SceneSpec":
        with open(path) as f:
            return cls.from_dict(yaml.safe_load(f) or {})

    def save(self, path) -> None:
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)


def _plain(v):
    if isinstance(v, (tuple, list, np.ndarray)):
        return [float(x) if isinstance(x, (float, np.floating)) else int(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


@dataclass
class Render:
    depth: np.ndarray  # (H, W) uint16 raw units, 0 = no hit
    color: np.ndarray  # (H, W, 3) uint8
    labels: np.ndarray  # (H, W) class ids, -1 = unlabeled
    instances: np.ndarray  # (H, W) instance ids, -1 = none
    normals: NormalMap  # analytic, camera frame, facing the camera
    exact_depth: np.ndarray  # (H, W) float meters, inf where no hit


def pitch_rotation(pitch_deg: float) -> np.ndarray:
    """Camera-to-world rotation for a camera pitched down by ``pitch_deg``."""
    t = np.deg2rad(pitch_deg)
    c, s = np.cos(t), np.sin(t)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])


def _hit_plane(p: Plane, d):
    n = np.asarray(p.normal, float)
    n = n / np.linalg.norm(n)
    denom = d @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (n @ np.asarray(p.point, float)) / denom
    t = np.where((np.abs(denom) > 1e-12) & (t > 0), t, np.inf)
    return t, np.broadcast_to(n, d.shape)


def _hit_box(b: Box, d):
    lo = np.asarray(b.center, float) - 0.5 * np.asarray(b.size, float)
    hi = np.asarray(b.center, float) + 0.5 * np.asarray(b.size, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = lo * inv
        t2 = hi * inv
    tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
    tmax = np.where(np.isnan(t1), np.inf, np.maximum(t1, t2))
    near = tmin.max(axis=-1)
    far = tmax.min(axis=-1)
    axis = tmin.argmax(axis=-1)
    t = np.where((near <= far) & (near > 0), near, np.inf)
    n = np.zeros_like(d)
    n[np.arange(len(d)), axis] = 1.0
    return t, n


def _hit_sphere(s: Sphere, d):
    c = np.asarray(s.center, float)
    a = np.einsum("ij,ij->i", d, d)
    b = d @ c
    disc = b * b - a * (c @ c - s.radius**2)
    with np.errstate(invalid="ignore"):
        t = (b - np.sqrt(disc)) / a
    t = np.where((disc >= 0) & (t > 0), t, np.inf)
    with np.errstate(invalid="ignore"):
        n = (t[:, None] * d - c) / s.radius
    return t, n


_HIT = {Plane: _hit_plane, Box: _hit_box, Sphere: _hit_sphere}


def render(spec: SceneSpec) -> Render:
    """Ray-cast the scene; ground truth is recorded before noise is added."""
    h, w = spec.height, spec.width
    k = spec.intrinsics
    v, u = np.mgrid[0:h, 0:w]
    dc = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones((h, w))], axis=-1).reshape(-1, 3)
    R = pitch_rotation(spec.pitch_deg)
    dw = dc @ R.T

    best = np.full(h * w, np.inf)
    which = np.full(h * w, -1, dtype=np.int64)
    nworld = np.zeros((h * w, 3))
    for i, prim in enumerate(spec.primitives):
        t, n = _HIT[type(prim)](prim, dw)
        closer = t < best
        best[closer] = t[closer]
        which[closer] = i
        nworld[closer] = n[closer]

    hit = np.isfinite(best) & (best <= spec.max_range)
    which[~hit] = -1
    best[~hit] = np.inf

    ncam = nworld @ R  # world-to-camera is R^T, applied to row vectors
    flip = np.einsum("ij,ij->i", ncam, dc) > 0
    ncam[flip] *= -1
    ncam[~hit] = 0.0
    nworld_facing = ncam @ R.T

    labels = np.full(h * w, -1, dtype=np.int64)
    instances = np.full(h * w, -1, dtype=np.int64)
    base = np.zeros((h * w, 3))
    for i, prim in enumerate(spec.primitives):
        m = which == i
        labels[m] = prim.class_id
        instances[m] = prim.instance_id
        base[m] = prim.color
    shade = 0.65 + 0.35 * np.abs(nworld_facing @ _LIGHT)
    color = base * shade[:, None]

    rng = np.random.default_rng(spec.seed)
    z = best.copy()
    if spec.depth_sigma > 0:
        z[hit] += rng.normal(0.0, spec.depth_sigma, hit.sum())
    raw = np.zeros(h * w, dtype=np.uint16)
    raw[hit] = np.clip(np.rint(z[hit] / k.depth_scale), 1, 65535).astype(np.uint16)
    if spec.color_sigma > 0:
        color[hit] += rng.normal(0.0, spec.color_sigma, (hit.sum(), 3))
    color = np.clip(np.rint(color), 0, 255).astype(np.uint8)
    color[~hit] = 0

    return Render(
        depth=raw.reshape(h, w),
        color=color.reshape(h, w, 3),
        labels=labels.reshape(h, w),
        instances=instances.reshape(h, w),
        normals=NormalMap(ncam.reshape(h, w, 3), hit.reshape(h, w)),
        exact_depth=best.reshape(h, w),
    )


def _footprint_overlaps(c, r, placed, margin=0.1):
    return any(abs(c[0] - q[0]) < r + s + margin and abs(c[1] - q[1]) < r + s + margin for q, s in placed)


def random_scene(
    seed: int,
    n_boxes=(1, 3),
    n_spheres=(0, 2),
    depth_sigma: float = 0.005,
    color_sigma: float = 2.0,
    camera_height: float = 1.2,
    pitch_deg: float = 20.0,
    width: int = 160,
    height: int = 120,
) -> SceneSpec:
    """Floor plane with boxes (furniture) and spheres (props) resting on it.

    Classes follow ``SYNTH_CLASSES``: floor 0, furniture 1, props 2.
    Instance 0 is the floor; objects are numbered from 1.
    """
    rng = np.random.default_rng(seed)
    prims = [
        Plane(
            (0.0, camera_height, 0.0),
            (0.0, -1.0, 0.0),
            tuple(int(c) for c in rng.integers([150, 130, 100], [190, 170, 140])),
            0,
            0,
        )
    ]
    placed = []
    inst = 1

    def spot(radius):
        for _ in range(200):
            c = (rng.uniform(-1.6, 1.6), rng.uniform(2.6, 4.8))
            if not _footprint_overlaps(c, radius, placed):
                placed.append((c, radius))
                return c
        return None

    for _ in range(rng.integers(n_boxes[0], n_boxes[1] + 1)):
        size = rng.uniform([0.4, 0.4, 0.4], [1.0, 1.0, 0.9])
        c = spot(0.5 * max(size[0], size[2]))
        if c is None:
            continue
        center = (c[0], camera_height - size[1] / 2, c[1])
        col = tuple(int(x) for x in rng.integers(30, 226, 3))
        prims.append(Box(center, tuple(size), col, 1, inst))
        inst += 1
    for _ in range(rng.integers(n_spheres[0], n_spheres[1] + 1)):
        r = rng.uniform(0.18, 0.35)
        c = spot(r)
        if c is None:
            continue
        col = tuple(int(x) for x in rng.integers(30, 226, 3))
        prims.append(Sphere((c[0], camera_height - r, c[1]), float(r), col, 2, inst))
        inst += 1
    return SceneSpec(
        width=width,
        height=height,
        intrinsics=CameraIntrinsics(width * 131.25 / 160, width * 131.25 / 160, width / 2 - 0.5, height / 2 - 0.5),
        primitives=prims,
        pitch_deg=pitch_deg,
        max_range=8.0,
        depth_sigma=depth_sigma,
        color_sigma=color_sigma,
        seed=seed,
    )
