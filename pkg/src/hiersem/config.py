"""Pipeline configuration: YAML on disk, validated dataclasses in memory.

Schema (every key optional; defaults shown by ``hiersem config``)::

    intrinsics: {fx, fy, cx, cy, depth_scale}   # null: Kinect-class defaults per image
    depth_source: raw                           # raw | inpainted, recorded in run metadata
    normals: {window, max_depth_gap, fill_invalid}
    oversegment: {lab_scale, k, min_size}
    hierarchy: {bins: [9 ints], ranges: [9 [lo, hi]], tree_cut}
    forest: {n_trees, max_depth, min_samples_leaf, features_per_split,
             bootstrap, class_weight, rng_seed}
    taxonomy: path to a taxonomy YAML, or null for the built-in synthetic classes
    min_purity: 0.5
    fill_missing: true                          # predicted classes spread to pixels without depth
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from .errors import ConfigError
from .forest import ForestConfig
from .geometry import CameraIntrinsics
from .hierarchy import BinLayout
from .oversegment import FHParams


@dataclass(frozen=True)
class NormalsConfig:
    window: int = 5
    max_depth_gap: float = 0.05
    fill_invalid: bool = True

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("normals.window must be >= 1")
        if not self.max_depth_gap > 0:
            raise ValueError("normals.max_depth_gap must be positive")


@dataclass(frozen=True)
class OversegmentConfig:
    lab_scale: float = 0.01
    k: float = 1.0
    min_size: int = 50

    def __post_init__(self):
        if not self.lab_scale > 0:
            raise ValueError("oversegment.lab_scale must be positive")
        FHParams(self.k, self.min_size)

    @property
    def fh(self) -> FHParams:
        return FHParams(self.k, self.min_size)


@dataclass(frozen=True)
class HierarchyConfig:
    bins: tuple = BinLayout().bins
    ranges: tuple = BinLayout().ranges
    tree_cut: float = 0.15

    def __post_init__(self):
        object.__setattr__(self, "bins", tuple(int(b) for b in self.bins))
        object.__setattr__(self, "ranges", tuple(tuple(float(x) for x in r) for r in self.ranges))
        BinLayout(self.bins, self.ranges)
        if not 0.0 <= self.tree_cut <= 1.0:
            raise ValueError("hierarchy.tree_cut must lie in [0, 1]")

    @property
    def layout(self) -> BinLayout:
        return BinLayout(self.bins, self.ranges)


@dataclass(frozen=True)
class PipelineConfig:
    intrinsics: CameraIntrinsics | None = None
    depth_source: str = "raw"
    normals: NormalsConfig = field(default_factory=NormalsConfig)
    oversegment: OversegmentConfig = field(default_factory=OversegmentConfig)
    hierarchy: HierarchyConfig = field(default_factory=HierarchyConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    taxonomy: str | None = None
    min_purity: float = 0.5
    fill_missing: bool = True

    def __post_init__(self):
        if self.depth_source not in ("raw", "inpainted"):
            raise ValueError("depth_source must be 'raw' or 'inpainted'")
        if not 0.0 <= self.min_purity <= 1.0:
            raise ValueError("min_purity must lie in [0, 1]")

    def intrinsics_for(self, width: int, height: int) -> CameraIntrinsics:
        k = self.intrinsics or CameraIntrinsics.kinect_default(width, height)
        k.check_image(width, height)
        return k

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hierarchy"]["ranges"] = [list(r) for r in self.hierarchy.ranges]
        d["hierarchy"]["bins"] = list(self.hierarchy.bins)
        return d

    def feature_hash(self) -> str:
        """Hash of everything that shapes features (intrinsics and forest excluded)."""
        d = self.to_dict()
        for key in ("intrinsics", "forest", "taxonomy", "min_purity", "fill_missing", "depth_source"):
            d.pop(key)
        return _digest(d)

    def config_hash(self) -> str:
        return _digest(self.to_dict())

    def with_seed(self, seed: int | None) -> "PipelineConfig":
        if seed is None:
            return self
        return replace(self, forest=replace(self.forest, rng_seed=int(seed)))


def _digest(d) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


_SECTIONS = {
    "normals": NormalsConfig,
    "oversegment": OversegmentConfig,
    "hierarchy": HierarchyConfig,
    "forest": ForestConfig,
    "intrinsics": CameraIntrinsics,
}


def from_dict(doc: dict | None) -> PipelineConfig:
    doc = dict(doc or {})
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    try:
        for key, value in doc.items():
            if key in _SECTIONS and value is not None:
                if not isinstance(value, dict):
                    raise ConfigError(f"{key} must be a mapping")
                kwargs[key] = _SECTIONS[key](**value)
            else:
                kwargs[key] = value
        return PipelineConfig(**kwargs)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from None


def load(path) -> PipelineConfig:
    try:
        with open(path) as f:
            doc = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from None
    if doc is not None and not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return from_dict(doc)


def dump(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
