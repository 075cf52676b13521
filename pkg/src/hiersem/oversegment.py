"""8-neighbor voxel graph and Felzenszwalb-Huttenlocher over-segmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .geometry import PointCloud
from .normals import NormalMap
from .segmap import SegmentMap, _neighbor_slices


@dataclass(frozen=True)
class FHParams:
    k: float = 1.0
    min_size: int = 50

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("k must be positive")
        if self.min_size < 1:
            raise ValueError("min_size must be >= 1")


@dataclass
class VoxelGraph:
    """Undirected weighted graph; edge ``i`` joins ``a[i] < b[i]``.

    ``nodes`` marks which nodes receive a region id; for image graphs
    ``shape`` is ``(H, W)`` and node ``v * W + u`` is pixel (u, v).
    """

    n_nodes: int
    a: np.ndarray
    b: np.ndarray
    w: np.ndarray
    nodes: np.ndarray | None = None
    shape: tuple | None = None

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.int64)
        self.b = np.asarray(self.b, dtype=np.int64)
        self.w = np.asarray(self.w, dtype=np.float64)
        swap = self.a > self.b
        if swap.any():
            self.a, self.b = np.where(swap, self.b, self.a), np.where(swap, self.a, self.b)
        if self.nodes is None:
            self.nodes = np.ones(self.n_nodes, dtype=bool)

    @property
    def n_edges(self) -> int:
        return len(self.w)


def edge_weight(n1, n2, c1, c2, lab_scale: float = 0.01):
    """Non-linear edge weight: the larger of the normal distance and the scaled LAB distance.

    Works elementwise on (..., 3) arrays.
    """
    dn = np.linalg.norm(np.asarray(n1, dtype=float) - np.asarray(n2, dtype=float), axis=-1)
    dc = np.linalg.norm(np.asarray(c1, dtype=float) - np.asarray(c2, dtype=float), axis=-1)
    return np.maximum(dn, lab_scale * dc)


def build_voxel_graph(cloud: PointCloud, normals: NormalMap, lab_scale: float = 0.01) -> VoxelGraph:
    """One edge per unordered 8-neighbor pair of pixels that both carry a valid normal."""
    if cloud.shape != normals.shape:
        raise InputError(f"cloud {cloud.shape} and normal map {normals.shape} differ")
    if not lab_scale > 0:
        raise ValueError("lab_scale must be positive")
    h, w = cloud.shape
    ids = np.arange(h * w, dtype=np.int64).reshape(h, w)
    ok = normals.valid & cloud.valid
    A, B, W = [], [], []
    for (ia, ib), (ma, mb), (na, nb), (ca, cb) in zip(
        _neighbor_slices(ids),
        _neighbor_slices(ok),
        _neighbor_slices(normals.normals),
        _neighbor_slices(cloud.lab),
    ):
        m = ma & mb
        A.append(ia[m])
        B.append(ib[m])
        W.append(edge_weight(na[m], nb[m], ca[m], cb[m], lab_scale))
    return VoxelGraph(
        h * w,
        np.concatenate(A),
        np.concatenate(B),
        np.concatenate(W),
        nodes=cloud.valid.ravel().copy(),
        shape=(h, w),
    )


def sorted_edge_order(g: VoxelGraph) -> np.ndarray:
    """Edge processing order: by weight, then smaller node id, then larger node id."""
    return np.lexsort((g.b, g.a, g.w))


def segment_graph(g: VoxelGraph, p: FHParams) -> SegmentMap:
    """Felzenszwalb-Huttenlocher merging with union-find.

    Two components merge on edge weight ``w`` when
    ``w <= min(Int(A) + k/|A|, Int(B) + k/|B|)``.  A second pass over the
    same order joins any component still smaller than ``min_size`` to the
    neighbor reached by its cheapest remaining edge.
    """
    n = g.n_nodes
    parent = list(range(n))
    size = [1] * n
    thresh = [p.k] * n
    k = p.k

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    order = sorted_edge_order(g)
    ea = g.a[order].tolist()
    eb = g.b[order].tolist()
    ew = g.w[order].tolist()

    for a, b, w in zip(ea, eb, ew):
        ra, rb = find(a), find(b)
        if ra != rb and w <= thresh[ra] and w <= thresh[rb]:
            if size[ra] < size[rb]:
                ra, rb = rb, ra
            parent[rb] = ra
            size[ra] += size[rb]
            thresh[ra] = w + k / size[ra]

    min_size = p.min_size
    if min_size > 1:
        for a, b in zip(ea, eb):
            ra, rb = find(a), find(b)
            if ra != rb and (size[ra] < min_size or size[rb] < min_size):
                if size[ra] < size[rb]:
                    ra, rb = rb, ra
                parent[rb] = ra
                size[ra] += size[rb]

    roots = np.fromiter((find(i) for i in range(n)), dtype=np.int64, count=n)
    roots[~g.nodes] = -1
    if g.shape is not None:
        roots = roots.reshape(g.shape)
    return SegmentMap.from_labels(roots)
