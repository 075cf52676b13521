"""Region-id rasters shared by over-segmentation and tree cuts."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import InputError

MAGIC = b"HSEGMAP\x01"
NONE = -1


@dataclass
class SegmentMap:
    """Per-node region ids (``-1`` for excluded nodes) plus region sizes.

    ``labels`` is (H, W) for image graphs and 1-D for abstract graphs.
    Ids are dense ``0..R-1`` and numbered by first appearance in raster
    order, so two maps with the same partition compare equal.
    """

    labels: np.ndarray
    sizes: np.ndarray

    @property
    def n_regions(self) -> int:
        return len(self.sizes)

    @property
    def shape(self):
        return self.labels.shape

    @classmethod
    def from_labels(cls, labels: np.ndarray) -> "SegmentMap":
        """Re-densify arbitrary integer labels; negative entries stay excluded."""
        labels = np.asarray(labels)
        flat = labels.ravel()
        keep = flat >= 0
        out = np.full(flat.shape, NONE, dtype=np.int64)
        if keep.any():
            uniq, first, inv = np.unique(flat[keep], return_index=True, return_inverse=True)
            # rank unique labels by first raster position
            order = np.argsort(first, kind="stable")
            rank = np.empty_like(order)
            rank[order] = np.arange(len(order))
            out[keep] = rank[inv.ravel()]
            sizes = np.bincount(out[keep], minlength=len(uniq))
        else:
            sizes = np.zeros(0, dtype=np.int64)
        return cls(out.reshape(labels.shape), sizes.astype(np.int64))

    @classmethod
    def empty(cls, shape) -> "SegmentMap":
        return cls(np.full(shape, NONE, dtype=np.int64), np.zeros(0, dtype=np.int64))

    def region_pixels(self) -> list[np.ndarray]:
        """Flat pixel indices of every region, indexed by region id."""
        flat = self.labels.ravel()
        idx = np.flatnonzero(flat >= 0)
        order = np.argsort(flat[idx], kind="stable")
        bounds = np.cumsum(self.sizes)[:-1]
        return np.split(idx[order], bounds) if self.n_regions else []


def adjacent_pairs(labels: np.ndarray) -> np.ndarray:
    """Unique (a, b), a < b, of distinct labels meeting across an 8-neighbor pixel pair."""
    labels = np.asarray(labels)
    pairs = []
    for a, b in _neighbor_slices(labels):
        m = (a >= 0) & (b >= 0) & (a != b)
        if m.any():
            lo = np.minimum(a[m], b[m])
            hi = np.maximum(a[m], b[m])
            pairs.append(np.stack([lo, hi], axis=1))
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(np.concatenate(pairs), axis=0).astype(np.int64)


def _neighbor_slices(grid: np.ndarray):
    """Views pairing every pixel with its right, down, down-right and down-left neighbors."""
    yield grid[:, :-1], grid[:, 1:]
    yield grid[:-1, :], grid[1:, :]
    yield grid[:-1, :-1], grid[1:, 1:]
    yield grid[:-1, 1:], grid[1:, :-1]


def save_segmap(seg: SegmentMap, path) -> None:
    """Write ``magic | width u32 | height u32 | int32 LE ids`` (``-1`` = none)."""
    if seg.labels.ndim != 2:
        raise ValueError("only image segment maps can be serialized")
    h, w = seg.labels.shape
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", w, h))
        f.write(seg.labels.astype("<i4").tobytes())


def load_segmap(path) -> SegmentMap:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != MAGIC:
        raise InputError(f"{path}: not a segment map")
    w, h = struct.unpack_from("<II", data, 8)
    body = np.frombuffer(data, dtype="<i4", offset=16)
    if body.size != w * h:
        raise InputError(f"{path}: truncated segment map")
    labels = body.reshape(h, w).astype(np.int64)
    keep = labels >= 0
    sizes = np.bincount(labels[keep], minlength=labels.max() + 1 if keep.any() else 0)
    return SegmentMap(labels, sizes.astype(np.int64))


def hash_colors(ids: np.ndarray) -> np.ndarray:
    """Deterministic pseudo-random RGB per id (Knuth multiplicative hash)."""
    h = (np.asarray(ids, dtype=np.uint64) + np.uint64(1)) * np.uint64(2654435761)
    h &= np.uint64(0xFFFFFFFF)
    h ^= h >> np.uint64(15)
    h = (h * np.uint64(2246822519)) & np.uint64(0xFFFFFFFF)
    rgb = np.stack([(h >> np.uint64(s)) & np.uint64(0xFF) for s in (0, 8, 16)], axis=-1)
    # keep colors away from black, which marks excluded pixels
    return (rgb.astype(np.uint16) // 2 + 64).astype(np.uint8)


def pseudocolor(labels: np.ndarray) -> np.ndarray:
    """(H, W) ids to (H, W, 3) uint8; negative ids render black."""
    labels = np.asarray(labels)
    out = np.zeros(labels.shape + (3,), dtype=np.uint8)
    m = labels >= 0
    out[m] = hash_colors(labels[m])
    return out
