"""Depth + RGB to organized point cloud conversion.

Pixels are addressed as (u, v) = (column, row).  Camera frame: x right,
y down, z forward (meters).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

# D65 reference white, 2 degree observer.
_WHITE_D65 = np.array([0.95047, 1.0, 1.08883])

_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    depth_scale: float = 0.001

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not self.depth_scale > 0:
            raise ValueError("depth_scale must be positive")

    @classmethod
    def kinect_default(cls, width: int, height: int) -> "CameraIntrinsics":
        """Kinect-class defaults centered on the image."""
        return cls(525.0, 525.0, width / 2 - 0.5, height / 2 - 0.5, 0.001)

    def check_image(self, width: int, height: int) -> None:
        if not (0 <= self.cx < width and 0 <= self.cy < height):
            raise InputError(
                f"principal point ({self.cx}, {self.cy}) outside {width}x{height} image"
            )

    def project(self, points: np.ndarray) -> np.ndarray:
        """Forward-project (..., 3) camera points to (..., 2) pixel coordinates."""
        points = np.asarray(points, dtype=float)
        z = points[..., 2]
        u = points[..., 0] * self.fx / z + self.cx
        v = points[..., 1] * self.fy / z + self.cy
        return np.stack([u, v], axis=-1)


@dataclass
class PointCloud:
    """Organized cloud: one entry per pixel, arrays shaped (H, W, ...).

    Invalid entries hold zeros in ``points`` and ``lab``; consumers must
    respect ``valid``.
    """

    points: np.ndarray  # (H, W, 3) float64, meters
    lab: np.ndarray  # (H, W, 3) float64
    valid: np.ndarray  # (H, W) bool

    @property
    def height(self) -> int:
        return self.valid.shape[0]

    @property
    def width(self) -> int:
        return self.valid.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _lab_f(t: np.ndarray) -> np.ndarray:
    delta = 6.0 / 29.0
    return np.where(t > delta**3, np.cbrt(t), t / (3 * delta**2) + 4.0 / 29.0)


def rgb_to_lab(r, g, b):
    """Convert 8-bit sRGB channels to CIE L*a*b* (D65).

    Accepts scalars or equally shaped arrays and returns ``(L, a, b)`` in
    the same shape.
    """
    rgb = np.stack(np.broadcast_arrays(r, g, b), axis=-1).astype(float) / 255.0
    lin = _srgb_to_linear(rgb)
    xyz = lin @ _SRGB_TO_XYZ.T
    f = _lab_f(xyz / _WHITE_D65)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    bb = 200.0 * (f[..., 1] - f[..., 2])
    if np.ndim(L) == 0:
        return float(L), float(a), float(bb)
    return L, a, bb


def image_to_lab(rgb: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 image to (H, W, 3) float LAB."""
    rgb = np.asarray(rgb)
    L, a, b = rgb_to_lab(rgb[..., 0], rgb[..., 1], rgb[..., 2])
    return np.stack([L, a, b], axis=-1)


def depth_to_cloud(depth: np.ndarray, color: np.ndarray, k: CameraIntrinsics) -> PointCloud:
    """Back-project a raw depth image through a pinhole camera.

    Parameters
    ----------
    depth : (H, W) unsigned array
        Raw depth units, 0 marks a missing measurement.
    color : (H, W, 3) uint8 array
        sRGB image registered to ``depth``.
    k : CameraIntrinsics

    Returns
    -------
    PointCloud
        Positions ``z = d * depth_scale``, ``x = (u - cx) z / fx``,
        ``y = (v - cy) z / fy``; raw 0 pixels are invalid.
    """
    depth = np.asarray(depth)
    color = np.asarray(color)
    if depth.ndim != 2:
        raise InputError(f"depth must be 2-D, got shape {depth.shape}")
    if color.ndim != 3 or color.shape[2] < 3:
        raise InputError(f"color must be (H, W, 3), got shape {color.shape}")
    if color.shape[:2] != depth.shape:
        raise InputError(
            f"depth {depth.shape[::-1]} and color {color.shape[1::-1]} dimensions differ"
        )
    h, w = depth.shape
    valid = depth > 0
    z = np.where(valid, depth.astype(float) * k.depth_scale, 0.0)
    v, u = np.mgrid[0:h, 0:w]
    x = (u - k.cx) * z / k.fx
    y = (v - k.cy) * z / k.fy
    points = np.stack([x, y, z], axis=-1)
    lab = image_to_lab(color[..., :3])
    lab[~valid] = 0.0
    return PointCloud(points=points, lab=lab, valid=valid)
