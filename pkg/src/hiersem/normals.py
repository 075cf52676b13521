"""Dense surface normals from an organized cloud via integral images.

Each normal is the cross product of two smoothed tangents.  The
horizontal tangent is the mean position of the right half-window minus
the mean of the left half-window; the vertical tangent likewise with
bottom and top.  Every mean is four lookups into an integral image, so
cost is independent of the window size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud


@dataclass
class IntegralImage:
    """Summed-area tables of a masked scalar channel.

    ``sums[v, u]`` is the sum of the channel over rows ``[0, v)`` and
    columns ``[0, u)``; ``counts`` is the same for the validity mask.
    """

    sums: np.ndarray  # (H+1, W+1) float64
    counts: np.ndarray  # (H+1, W+1) int64

    def window_sum(self, u0, v0, u1, v1):
        """Sum over columns [u0, u1) and rows [v0, v1).  Accepts arrays."""
        t = self.sums
        return t[v1, u1] - t[v1, u0] - t[v0, u1] + t[v0, u0]

    def window_count(self, u0, v0, u1, v1):
        t = self.counts
        return t[v1, u1] - t[v1, u0] - t[v0, u1] + t[v0, u0]


def _summed_area(a: np.ndarray, dtype) -> np.ndarray:
    h, w = a.shape
    out = np.zeros((h + 1, w + 1), dtype=dtype)
    if h and w:
        np.cumsum(a, axis=0, dtype=dtype, out=out[1:, 1:])
        np.cumsum(out[1:, 1:], axis=1, dtype=dtype, out=out[1:, 1:])
    return out


def build_integral(channel: np.ndarray, mask: np.ndarray | None = None) -> IntegralImage:
    """Integral image of ``channel``; masked-out pixels contribute 0 and are not counted."""
    channel = np.asarray(channel, dtype=float)
    if channel.ndim != 2:
        raise ValueError(f"expected a 2-D channel, got shape {channel.shape}")
    if mask is None:
        mask = np.ones(channel.shape, dtype=bool)
    vals = np.where(mask, channel, 0.0)
    return IntegralImage(_summed_area(vals, np.float64), _summed_area(mask.astype(np.int64), np.int64))


@dataclass
class NormalMap:
    normals: np.ndarray  # (H, W, 3), zeros where invalid
    valid: np.ndarray  # (H, W) bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape


def _jump_flags(z: np.ndarray, valid: np.ndarray, gap: float):
    """Flag each pixel whose right (resp. lower) valid neighbor differs by more than ``gap``."""
    h, w = z.shape
    horiz = np.zeros((h, w), dtype=bool)
    vert = np.zeros((h, w), dtype=bool)
    if w > 1:
        both = valid[:, :-1] & valid[:, 1:]
        horiz[:, :-1] = both & (np.abs(z[:, 1:] - z[:, :-1]) > gap)
    if h > 1:
        both = valid[:-1, :] & valid[1:, :]
        vert[:-1, :] = both & (np.abs(z[1:, :] - z[:-1, :]) > gap)
    return horiz, vert


def estimate_normals(cloud: PointCloud, window: int = 5, max_depth_gap: float = 0.05) -> NormalMap:
    """Estimate a camera-facing unit normal at every valid pixel.

    Parameters
    ----------
    cloud : PointCloud
    window : int
        Half-width ``r`` of the square support ``[u-r, u+r] x [v-r, v+r]``.
    max_depth_gap : float
        Adjacent-pixel depth jump (meters) treated as a discontinuity.  A
        pixel whose support contains one gets no normal.

    Returns
    -------
    NormalMap
        Normals satisfy ``n . p <= 0`` (they face the viewpoint).
        Pixels with fewer than 3 valid samples in their support, an empty
        half-window, or a degenerate cross product are invalid.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    h, w = cloud.shape
    normals = np.zeros((h, w, 3))
    if h == 0 or w == 0:
        return NormalMap(normals, np.zeros((h, w), dtype=bool))

    valid = cloud.valid
    pts = cloud.points
    r = window
    horiz, vert = _jump_flags(pts[..., 2], valid, max_depth_gap)
    pad = r + 1
    rows = np.clip(np.arange(-pad, h + pad + 1), 0, h)
    cols = np.clip(np.arange(-pad, w + pad + 1), 0, w)

    def padded_table(stack):
        table = np.zeros((h + 1, w + 1, stack.shape[-1]))
        np.cumsum(stack, axis=0, out=table[1:, 1:])
        np.cumsum(table[1:, 1:], axis=1, out=table[1:, 1:])
        # edge replication turns clipped window corners into plain slices
        return table[rows][:, cols]

    stack = np.empty((h, w, 4))
    stack[..., :3] = pts
    stack[~valid, :3] = 0.0
    stack[..., 3] = valid
    xyzc = padded_table(stack)
    jmp = padded_table(np.stack([horiz, vert], axis=-1).astype(np.float64))

    def box(t, du0, dv0, du1, dv1):
        # columns [u+du0, u+du1), rows [v+dv0, v+dv1), clipped to the image
        def corner(dv, du):
            return t[pad + dv : pad + dv + h, pad + du : pad + du + w]

        return corner(dv1, du1) - corner(dv1, du0) - corner(dv0, du1) + corner(dv0, du0)

    def half_mean(du0, dv0, du1, dv1):
        s = box(xyzc, du0, dv0, du1, dv1)
        n = s[..., 3]
        return s[..., :3] / np.maximum(n, 1.0)[..., None], n

    left, nl = half_mean(-r, -r, 0, r + 1)
    right, nr = half_mean(1, -r, r + 1, r + 1)
    top, nt = half_mean(-r, -r, r + 1, 0)
    bottom, nb = half_mean(-r, 1, r + 1, r + 1)

    th = right - left
    tv = bottom - top
    n = np.empty_like(th)
    n[..., 0] = th[..., 1] * tv[..., 2] - th[..., 2] * tv[..., 1]
    n[..., 1] = th[..., 2] * tv[..., 0] - th[..., 0] * tv[..., 2]
    n[..., 2] = th[..., 0] * tv[..., 1] - th[..., 1] * tv[..., 0]
    length = np.sqrt(np.einsum("hwc,hwc->hw", n, n))

    # support is the union of the left half, center column and right half
    support = nl + nr + box(xyzc[..., 3:4], 0, -r, 1, r + 1)[..., 0]
    # horizontal pair (u', u'+1) lies inside the support iff u' in [u-r, u+r-1]
    jumps = box(jmp[..., 0:1], -r, -r, r, r + 1)[..., 0] + box(jmp[..., 1:2], -r, -r, r + 1, r)[..., 0]
    ok = (
        valid
        & (support >= 3)
        & (nl > 0)
        & (nr > 0)
        & (nt > 0)
        & (nb > 0)
        & (jumps < 0.5)
        & (length > 1e-12)
    )
    n = np.where(ok[..., None], n / np.where(length > 0, length, 1.0)[..., None], 0.0)
    facing = np.einsum("hwc,hwc->hw", n, pts)
    n[facing > 0] *= -1
    return NormalMap(n, ok)


def normals_to_rgb(nm: NormalMap) -> np.ndarray:
    """8-bit debug rendering, n in [-1, 1] mapped to [0, 255]; invalid pixels black."""
    img = np.rint((nm.normals + 1.0) * 127.5).clip(0, 255).astype(np.uint8)
    img[~nm.valid] = 0
    return img


def fill_invalid(nm: NormalMap, usable: np.ndarray) -> NormalMap:
    """Give each ``usable`` pixel without a normal the normal of its nearest valid pixel."""
    from scipy import ndimage

    if not nm.valid.any():
        return nm
    missing = usable & ~nm.valid
    if not missing.any():
        return nm
    _, (iv, iu) = ndimage.distance_transform_edt(~nm.valid, return_indices=True)
    normals = nm.normals.copy()
    normals[missing] = nm.normals[iv[missing], iu[missing]]
    return NormalMap(normals, nm.valid | missing)
