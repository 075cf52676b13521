"""Fixed-length region feature vectors and named feature groups."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .hierarchy import BinLayout, RegionDescriptor

_HIST_SPANS = (
    ("L histogram", "L"),
    ("A histogram", "a"),
    ("B histogram", "b"),
    ("3D X histogram", "x"),
    ("3D Y histogram", "y"),
    ("3D Z histogram", "z"),
    ("Nx histogram", "nx"),
    ("Ny histogram", "ny"),
    ("Nz histogram", "nz"),
)

_SCALAR_SPANS = (
    "size",
    "width",
    "height",
    "2D X centroid",
    "2D Y centroid",
    "3D X centroid",
    "3D Y centroid",
    "3D Z centroid",
    "3D X min",
    "3D Y min",
    "3D Z min",
    "3D X max",
    "3D Y max",
    "3D Z max",
)

APPEARANCE = "appearance"

# composite groups on top of the atomic spans
GROUPS = {
    "2D centroid": ("2D X centroid", "2D Y centroid"),
    "3D centroid": ("3D X centroid", "3D Y centroid", "3D Z centroid"),
    "3D min": ("3D X min", "3D Y min", "3D Z min"),
    "3D max": ("3D X max", "3D Y max", "3D Z max"),
    "LAB histograms": ("L histogram", "A histogram", "B histogram"),
    "XYZ histograms": ("3D X histogram", "3D Y histogram", "3D Z histogram"),
    "normal histograms": ("Nx histogram", "Ny histogram", "Nz histogram"),
}

# the single-feature columns of the per-feature accuracy study
ABLATION_GROUPS = (
    "size",
    "2D X centroid",
    "2D Y centroid",
    "3D X centroid",
    "3D Y centroid",
    "3D Z centroid",
    "A histogram",
    "B histogram",
    "L histogram",
    "Nx histogram",
    "Ny histogram",
    "Nz histogram",
    "3D X histogram",
    "3D Y histogram",
    "3D Z histogram",
)


@dataclass(frozen=True)
class FeatureLayout:
    """Ordered atomic spans ``(name, offset, length)``."""

    spans: tuple

    @classmethod
    def for_bins(cls, bins: BinLayout | None = None, appearance: int = 0) -> "FeatureLayout":
        bins = bins or BinLayout()
        lengths = [(name, bins.bins[i]) for i, (name, _) in enumerate(_HIST_SPANS)]
        lengths += [(name, 1) for name in _SCALAR_SPANS]
        if appearance:
            lengths.append((APPEARANCE, int(appearance)))
        spans, off = [], 0
        for name, n in lengths:
            spans.append((name, off, n))
            off += n
        return cls(tuple(spans))

    @property
    def length(self) -> int:
        name, off, n = self.spans[-1]
        return off + n

    @property
    def appearance_length(self) -> int:
        for name, _, n in self.spans:
            if name == APPEARANCE:
                return n
        return 0

    @property
    def names(self) -> list:
        return [s[0] for s in self.spans]

    def members(self, group: str) -> tuple:
        if group == "all":
            return tuple(self.names)
        if group in GROUPS:
            return GROUPS[group]
        if group in self.names:
            return (group,)
        raise InputError(f"unknown feature group {group!r}")

    def columns(self, group: str) -> np.ndarray:
        table = {name: (off, n) for name, off, n in self.spans}
        return np.concatenate([np.arange(table[m][0], table[m][0] + table[m][1]) for m in self.members(group)])

    def column_names(self) -> list:
        return [f"{name}:{i}" for name, _, n in self.spans for i in range(n)]

    def to_list(self) -> list:
        return [list(s) for s in self.spans]

    @classmethod
    def from_list(cls, spans) -> "FeatureLayout":
        return cls(tuple((str(a), int(b), int(c)) for a, b, c in spans))


@dataclass
class FeatureVector:
    values: np.ndarray
    layout: FeatureLayout

    def span(self, name: str) -> np.ndarray:
        for n, off, length in self.layout.spans:
            if n == name:
                return self.values[off : off + length]
        raise InputError(f"unknown span {name!r}")


def _descriptor_values(d: RegionDescriptor) -> np.ndarray:
    scalars = np.concatenate(
        [[d.size_3d, d.width_3d, d.height_3d], d.centroid_2d, d.centroid_3d, d.min_3d, d.max_3d]
    )
    return np.concatenate([d.normalized, scalars])


def extract_features(d: RegionDescriptor, appearance=None) -> FeatureVector:
    """Histograms (L, a, b, x, y, z, nx, ny, nz) then 14 geometric scalars, then ``appearance``."""
    parts = [_descriptor_values(d)]
    n_app = 0
    if appearance is not None:
        appearance = np.asarray(appearance, dtype=float).ravel()
        n_app = len(appearance)
        parts.append(appearance)
    return FeatureVector(np.concatenate(parts), FeatureLayout.for_bins(d.layout, n_app))


def feature_matrix(descriptors, appearance=None, bins: BinLayout | None = None):
    """Stack feature vectors of many regions; returns ``(X, layout)``."""
    if appearance is not None and len(appearance) != len(descriptors):
        raise InputError("one appearance vector per region is required")
    rows = [
        extract_features(d, None if appearance is None else appearance[i]) for i, d in enumerate(descriptors)
    ]
    if not rows:
        layout = FeatureLayout.for_bins(bins)
        return np.zeros((0, layout.length)), layout
    layout = rows[0].layout
    if any(r.layout != layout for r in rows):
        raise InputError("inconsistent feature layouts across regions")
    return np.stack([r.values for r in rows]), layout


def select_spans(v: FeatureVector, group: str) -> FeatureVector:
    """Restrict a vector to a named group, with its own compacted span table."""
    members = v.layout.members(group)
    table = {name: (off, n) for name, off, n in v.layout.spans}
    spans, parts, off = [], [], 0
    for m in members:
        o, n = table[m]
        spans.append((m, off, n))
        parts.append(v.values[o : o + n])
        off += n
    return FeatureVector(np.concatenate(parts), FeatureLayout(tuple(spans)))


def write_feature_csv(path, X: np.ndarray, layout: FeatureLayout, labels=None, comments=()) -> None:
    with open(path, "w", newline="") as f:
        for c in comments:
            f.write(f"# {c}\n")
        w = csv.writer(f)
        header = layout.column_names() + (["label"] if labels is not None else [])
        w.writerow(header)
        for i, row in enumerate(X):
            out = [repr(float(x)) for x in row]
            if labels is not None:
                out.append(int(labels[i]))
            w.writerow(out)
