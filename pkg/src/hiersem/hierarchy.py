"""Region histograms, the region adjacency graph and greedy agglomeration.

Every region carries nine 1-D histograms (L, a, b, x, y, z, nx, ny, nz)
and the distance between two regions is the sum of absolute differences
between their count-normalized histograms, so it lies in [0, 18].
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .segmap import SegmentMap, adjacent_pairs

CHANNELS = ("L", "a", "b", "x", "y", "z", "nx", "ny", "nz")
MAX_DISTANCE = 2.0 * len(CHANNELS)


@dataclass(frozen=True)
class BinLayout:
    bins: tuple = (20, 20, 20, 30, 30, 30, 30, 30, 30)
    ranges: tuple = (
        (0.0, 100.0),
        (-110.0, 110.0),
        (-110.0, 110.0),
        (-4.0, 4.0),
        (-4.0, 4.0),
        (0.0, 8.0),
        (-1.0, 1.0),
        (-1.0, 1.0),
        (-1.0, 1.0),
    )

    def __post_init__(self):
        object.__setattr__(self, "bins", tuple(int(b) for b in self.bins))
        object.__setattr__(self, "ranges", tuple((float(lo), float(hi)) for lo, hi in self.ranges))
        if len(self.bins) != len(CHANNELS) or len(self.ranges) != len(CHANNELS):
            raise ValueError(f"need bins and ranges for {len(CHANNELS)} channels")
        for b, (lo, hi) in zip(self.bins, self.ranges):
            if b < 1 or not lo < hi:
                raise ValueError(f"bad bin spec {b} over [{lo}, {hi}]")

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.bins)])

    @property
    def total_bins(self) -> int:
        return int(sum(self.bins))

    def span(self, channel: str) -> slice:
        i = CHANNELS.index(channel)
        off = self.offsets
        return slice(int(off[i]), int(off[i + 1]))

    def bin_index(self, values: np.ndarray) -> np.ndarray:
        """(N, 9) channel values to (N, 9) global bin indices, clamped to the outer bins."""
        values = np.asarray(values, dtype=float)
        lo = np.array([r[0] for r in self.ranges])
        hi = np.array([r[1] for r in self.ranges])
        nb = np.array(self.bins)
        idx = np.floor((values - lo) / (hi - lo) * nb).astype(np.int64)
        idx = np.clip(idx, 0, nb - 1)
        return idx + self.offsets[:-1]


@dataclass
class RegionDescriptor:
    """Raw histogram counts plus the sums and extrema needed for geometric scalars."""

    counts: np.ndarray  # (total_bins,) int64, every channel sums to voxel_count
    voxel_count: int
    sum_3d: np.ndarray
    sum_2d: np.ndarray
    min_3d: np.ndarray
    max_3d: np.ndarray
    layout: BinLayout = field(default_factory=BinLayout)

    @property
    def normalized(self) -> np.ndarray:
        return self.counts / self.voxel_count

    def histogram(self, channel: str) -> np.ndarray:
        return self.normalized[self.layout.span(channel)]

    @property
    def centroid_3d(self) -> np.ndarray:
        return self.sum_3d / self.voxel_count

    @property
    def centroid_2d(self) -> np.ndarray:
        return self.sum_2d / self.voxel_count

    @property
    def size_3d(self) -> float:
        return float(np.linalg.norm(self.max_3d - self.min_3d))

    @property
    def width_3d(self) -> float:
        return float(self.max_3d[0] - self.min_3d[0])

    @property
    def height_3d(self) -> float:
        return float(self.max_3d[1] - self.min_3d[1])


def region_descriptor(positions, lab, normals, pixels, layout: BinLayout | None = None) -> RegionDescriptor:
    """Describe one region from its voxels.

    Parameters
    ----------
    positions, lab, normals : (N, 3) arrays
    pixels : (N, 2) array of (u, v) image coordinates
    layout : BinLayout, optional
    """
    layout = layout or BinLayout()
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    n = len(positions)
    if n == 0:
        raise InputError("cannot describe an empty region")
    values = np.concatenate(
        [np.asarray(lab, float).reshape(-1, 3), positions, np.asarray(normals, float).reshape(-1, 3)],
        axis=1,
    )
    counts = np.bincount(layout.bin_index(values).ravel(), minlength=layout.total_bins)
    return RegionDescriptor(
        counts=counts.astype(np.int64),
        voxel_count=n,
        sum_3d=positions.sum(axis=0),
        sum_2d=np.asarray(pixels, dtype=float).reshape(-1, 2).sum(axis=0),
        min_3d=positions.min(axis=0),
        max_3d=positions.max(axis=0),
        layout=layout,
    )


def describe_regions(seg: SegmentMap, points, lab, normals, layout: BinLayout | None = None) -> list:
    """Descriptors for every region of an image segmentation in one vectorized pass."""
    layout = layout or BinLayout()
    R = seg.n_regions
    if R == 0:
        return []
    h, w = seg.shape
    flat = seg.labels.ravel()
    m = flat >= 0
    reg = flat[m]
    pos = points.reshape(-1, 3)[m]
    values = np.concatenate([lab.reshape(-1, 3)[m], pos, normals.reshape(-1, 3)[m]], axis=1)
    nb = layout.total_bins
    gidx = layout.bin_index(values) + (reg * nb)[:, None]
    counts = np.bincount(gidx.ravel(), minlength=R * nb).reshape(R, nb)
    pix = np.flatnonzero(m)
    uv = np.stack([pix % w, pix // w], axis=1).astype(float)
    sum3 = np.stack([np.bincount(reg, pos[:, c], minlength=R) for c in range(3)], axis=1)
    sum2 = np.stack([np.bincount(reg, uv[:, c], minlength=R) for c in range(2)], axis=1)
    mn = np.full((R, 3), np.inf)
    mx = np.full((R, 3), -np.inf)
    np.minimum.at(mn, reg, pos)
    np.maximum.at(mx, reg, pos)
    return [
        RegionDescriptor(counts[r].astype(np.int64), int(seg.sizes[r]), sum3[r], sum2[r], mn[r], mx[r], layout)
        for r in range(R)
    ]


def histogram_distance(r: RegionDescriptor, s: RegionDescriptor) -> float:
    """Sum over all nine channels of |R[i]/R_N - S[i]/S_N|."""
    if r.layout != s.layout:
        raise InputError("descriptors use different bin layouts")
    return float(np.abs(r.counts / r.voxel_count - s.counts / s.voxel_count).sum())


def merge_descriptors(r: RegionDescriptor, s: RegionDescriptor) -> RegionDescriptor:
    """Exact descriptor of the union of two disjoint regions."""
    return RegionDescriptor(
        counts=r.counts + s.counts,
        voxel_count=r.voxel_count + s.voxel_count,
        sum_3d=r.sum_3d + s.sum_3d,
        sum_2d=r.sum_2d + s.sum_2d,
        min_3d=np.minimum(r.min_3d, s.min_3d),
        max_3d=np.maximum(r.max_3d, s.max_3d),
        layout=r.layout,
    )


@dataclass
class SGraph:
    descriptors: list
    edges: dict  # (a, b) with a < b -> distance
    leaves: SegmentMap | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.descriptors)


def build_sgraph(seg: SegmentMap, descriptors: list) -> SGraph:
    """Join regions that touch across any 8-neighbor pixel pair."""
    if len(descriptors) != seg.n_regions:
        raise InputError(f"{len(descriptors)} descriptors for {seg.n_regions} regions")
    edges = {
        (int(a), int(b)): histogram_distance(descriptors[a], descriptors[b])
        for a, b in adjacent_pairs(seg.labels)
    }
    return SGraph(list(descriptors), edges, seg)


@dataclass
class Merge:
    order: int
    left: int
    right: int
    node: int
    cost: float


@dataclass
class Dendrogram:
    """Binary merge forest.  Leaves are ``0..n_leaves-1``; merge ``i`` creates node ``n_leaves + i``."""

    n_leaves: int
    merges: list
    descriptors: list
    leaves: SegmentMap | None = None

    @property
    def n_nodes(self) -> int:
        return self.n_leaves + len(self.merges)

    def children(self, node: int):
        if node < self.n_leaves:
            return None
        m = self.merges[node - self.n_leaves]
        return m.left, m.right

    def roots(self) -> list:
        has_parent = np.zeros(self.n_nodes, dtype=bool)
        for m in self.merges:
            has_parent[[m.left, m.right]] = True
        return [int(i) for i in np.flatnonzero(~has_parent)]

    def dump(self) -> str:
        return "".join(f"merge {m.order} {m.left} {m.right} cost={m.cost:.9f}\n" for m in self.merges)


def build_dendrogram(g: SGraph) -> Dendrogram:
    """Greedy agglomeration: always merge the cheapest adjacent cluster pair.

    Ties go to the lexicographically smallest (id, id) pair.  The merged
    cluster gets a fresh id, its descriptor is the exact union, and its
    distance to every neighbor of either child is recomputed.
    """
    descs = list(g.descriptors)
    n = len(descs)
    adj = [set() for _ in range(n)]
    heap = []
    for (a, b), w in g.edges.items():
        adj[a].add(b)
        adj[b].add(a)
        heap.append((w, a, b))
    heapq.heapify(heap)
    alive = [True] * n
    merges = []
    while heap:
        w, a, b = heapq.heappop(heap)
        if not (alive[a] and alive[b]):
            continue
        c = len(descs)
        descs.append(merge_descriptors(descs[a], descs[b]))
        alive[a] = alive[b] = False
        alive.append(True)
        nbrs = (adj[a] | adj[b]) - {a, b}
        adj.append(nbrs)
        for x in nbrs:
            adj[x].discard(a)
            adj[x].discard(b)
            adj[x].add(c)
            heapq.heappush(heap, (histogram_distance(descs[x], descs[c]), x, c))
        merges.append(Merge(len(merges), a, b, c, w))
    return Dendrogram(n, merges, descs, g.leaves)


def cut_dendrogram(d: Dendrogram, cut: float) -> SegmentMap:
    """Flatten the dendrogram at threshold ``cut * 18``.

    Every merge whose recorded cost is within the threshold is applied,
    wherever it sits in the merge order; applying a merge unites every
    leaf beneath both children.
    """
    if not 0.0 <= cut <= 1.0:
        raise ValueError("cut must lie in [0, 1]")
    limit = cut * MAX_DISTANCE
    group = np.arange(d.n_nodes, dtype=np.int64)
    # visit from the roots down, so a node's group is its topmost applied ancestor
    for m in reversed(d.merges):
        if group[m.node] != m.node or m.cost <= limit:
            group[m.left] = group[m.right] = group[m.node]
    leaf_group = group[: d.n_leaves]
    if d.leaves is None:
        return SegmentMap.from_labels(leaf_group)
    labels = d.leaves.labels
    if d.n_leaves == 0:
        return SegmentMap.from_labels(labels)
    out = np.where(labels >= 0, leaf_group[np.maximum(labels, 0)], -1)
    return SegmentMap.from_labels(out)
