"""Per-frame processing chain shared by the CLI and the end-to-end tests."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import forest as rf
from .config import PipelineConfig
from .errors import InputError
from .evaluate import ClassTaxonomy, InstanceLabeling, project_predictions, transfer_labels
from .features import FeatureLayout, feature_matrix
from .geometry import PointCloud, depth_to_cloud
from .hierarchy import Dendrogram, build_dendrogram, build_sgraph, cut_dendrogram, describe_regions
from .normals import NormalMap, estimate_normals, fill_invalid
from .oversegment import build_voxel_graph, segment_graph
from .segmap import SegmentMap

log = logging.getLogger(__name__)


@dataclass
class FrameResult:
    cloud: PointCloud
    normals: NormalMap
    superpixels: SegmentMap
    dendrogram: Dendrogram
    segments: SegmentMap
    descriptors: list


def segment_frame(depth: np.ndarray, color: np.ndarray, cfg: PipelineConfig) -> FrameResult:
    """Cloud, normals, over-segmentation, dendrogram and the configured tree cut."""
    h, w = np.shape(depth)[:2]
    cloud = depth_to_cloud(depth, color, cfg.intrinsics_for(w, h))
    nm = estimate_normals(cloud, cfg.normals.window, cfg.normals.max_depth_gap)
    if cfg.normals.fill_invalid:
        nm = fill_invalid(nm, cloud.valid)
    g = build_voxel_graph(cloud, nm, cfg.oversegment.lab_scale)
    # pixels left without a normal cannot be described, so they stay unsegmented
    g.nodes = (cloud.valid & nm.valid).ravel()
    superpixels = segment_graph(g, cfg.oversegment.fh)
    layout = cfg.hierarchy.layout
    leaf_desc = describe_regions(superpixels, cloud.points, cloud.lab, nm.normals, layout)
    dendro = build_dendrogram(build_sgraph(superpixels, leaf_desc))
    segments = cut_dendrogram(dendro, cfg.hierarchy.tree_cut)
    descs = describe_regions(segments, cloud.points, cloud.lab, nm.normals, layout)
    return FrameResult(cloud, nm, superpixels, dendro, segments, descs)


def frame_features(res: FrameResult, cfg: PipelineConfig):
    return feature_matrix(res.descriptors, bins=cfg.hierarchy.layout)


def expected_layout(cfg: PipelineConfig) -> FeatureLayout:
    return FeatureLayout.for_bins(cfg.hierarchy.layout)


def training_rows(res: FrameResult, gt_classes: np.ndarray, cfg: PipelineConfig, K: int):
    """Feature rows and segment labels of one frame, impure segments dropped."""
    if gt_classes.shape != res.segments.shape:
        raise InputError(f"label image {gt_classes.shape} does not match frame {res.segments.shape}")
    X, layout = frame_features(res, cfg)
    y, _ = transfer_labels(res.segments, gt_classes, cfg.min_purity, K)
    keep = y >= 0
    return X[keep], y[keep], layout


@dataclass
class Prediction:
    classes: np.ndarray  # (H, W), -1 where nothing was predicted
    instances: InstanceLabeling
    segment_classes: np.ndarray
    posteriors: np.ndarray  # (R, K)


def predict_frame(res: FrameResult, model: rf.Forest, cfg: PipelineConfig) -> Prediction:
    X, _ = frame_features(res, cfg)
    K = model.n_classes
    if len(X):
        seg_cls, post = rf.predict_many(model, X)
    else:
        seg_cls, post = np.zeros(0, dtype=np.int64), np.zeros((0, K))
    classes, inst = project_predictions(res.segments, seg_cls)
    if cfg.fill_missing:
        classes = fill_nearest(classes)
    return Prediction(classes, inst, seg_cls, post)


def fill_nearest(classes: np.ndarray) -> np.ndarray:
    """Copy the nearest predicted class into pixels that have none."""
    missing = classes < 0
    if not missing.any() or missing.all():
        return classes
    _, (iv, iu) = ndimage.distance_transform_edt(missing, return_indices=True)
    return classes[iv, iu]


def default_taxonomy() -> ClassTaxonomy:
    from .synthetic import SYNTH_CLASSES

    return ClassTaxonomy(SYNTH_CLASSES)
