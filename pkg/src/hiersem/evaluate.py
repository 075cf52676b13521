"""Label transfer, confusion matrices, accuracy metrics and feature ablation."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import forest as rf
from .errors import ConfigError, InputError
from .features import ABLATION_GROUPS, FeatureLayout
from .segmap import SegmentMap

UNLABELED = -1

FOUR_CLASS = ("floor", "structure", "furniture", "props")
FOURTEEN_CLASS = (
    "bed",
    "books",
    "ceiling",
    "chair",
    "floor",
    "furniture",
    "objects",
    "picture",
    "sofa",
    "table",
    "tv",
    "wall",
    "window",
    "other",
)


@dataclass
class ClassTaxonomy:
    """Class names plus an optional raw-id -> class-index table.

    Without a table, raw id ``r > 0`` means class ``r - 1`` and raw 0 is
    unlabeled.  With a table, raw ids absent from it are an error unless
    ``unmapped_unlabeled`` is set.
    """

    names: tuple
    mapping: dict | None = None
    unmapped_unlabeled: bool = False

    @property
    def K(self) -> int:
        return len(self.names)

    @classmethod
    def load(cls, path) -> "ClassTaxonomy":
        with open(path) as f:
            doc = yaml.safe_load(f) or {}
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "ClassTaxonomy":
        if "names" not in doc:
            raise ConfigError("taxonomy needs a 'names' list")
        names = tuple(str(n) for n in doc["names"])
        mapping = None
        if doc.get("mapping") is not None:
            mapping = {}
            for raw, cls_ in doc["mapping"].items():
                if isinstance(cls_, str) and cls_ not in names:
                    raise ConfigError(f"mapping for raw id {raw} names unknown class {cls_!r}")
                idx = names.index(cls_) if isinstance(cls_, str) else int(cls_)
                if not (idx == UNLABELED or 0 <= idx < len(names)):
                    raise ConfigError(f"mapping for raw id {raw} targets class {cls_!r}")
                mapping[int(raw)] = idx
        return cls(names, mapping, bool(doc.get("unmapped_unlabeled", False)))

    def to_dict(self) -> dict:
        out = {"names": list(self.names)}
        if self.mapping is not None:
            out["mapping"] = {int(k): int(v) for k, v in self.mapping.items()}
            out["unmapped_unlabeled"] = self.unmapped_unlabeled
        return out

    def map_raw(self, raw: np.ndarray) -> np.ndarray:
        """Raw label image to class ids (``UNLABELED`` for raw 0 and unmapped ids)."""
        raw = np.asarray(raw).astype(np.int64)
        out = np.full(raw.shape, UNLABELED, dtype=np.int64)
        present = np.unique(raw[raw > 0])
        if self.mapping is None:
            bad = present[present > self.K]
            if len(bad):
                raise InputError(f"raw label id {int(bad[0])} exceeds the {self.K}-class taxonomy")
            m = raw > 0
            out[m] = raw[m] - 1
            return out
        for r in present:
            if int(r) in self.mapping:
                out[raw == r] = self.mapping[int(r)]
            elif not self.unmapped_unlabeled:
                raise InputError(f"raw label id {int(r)} is not in the taxonomy mapping")
        return out


def _check_shape(a, b, what):
    if np.shape(a) != np.shape(b):
        raise InputError(f"{what}: dimensions {np.shape(a)} and {np.shape(b)} differ")


def transfer_labels(seg: SegmentMap, gt: np.ndarray, min_purity: float = 0.5, K: int | None = None):
    """Majority ground-truth class of every segment.

    Returns ``(labels, purity)`` arrays of length ``R``; segments with no
    labeled pixel or a majority share below ``min_purity`` get ``-1``.
    Ties go to the lowest class id.
    """
    _check_shape(seg.labels, gt, "transfer_labels")
    gt = np.asarray(gt, dtype=np.int64)
    R = seg.n_regions
    m = (seg.labels >= 0) & (gt >= 0)
    K = int(K if K is not None else (gt[m].max() + 1 if m.any() else 1))
    votes = np.bincount(seg.labels[m] * K + gt[m], minlength=R * K).reshape(R, K)
    total = votes.sum(axis=1)
    best = np.argmax(votes, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        purity = np.where(total > 0, votes[np.arange(R), best] / np.maximum(total, 1), 0.0)
    labels = np.where((total > 0) & (purity >= min_purity), best, -1)
    return labels.astype(np.int64), purity


@dataclass
class InstanceLabeling:
    instances: np.ndarray  # (H, W) instance ids, -1 outside
    classes: np.ndarray  # (H, W) class ids, -1 outside
    instance_class: np.ndarray  # (n_instances,)
    instance_size: np.ndarray  # (n_instances,)

    @property
    def n_instances(self) -> int:
        return len(self.instance_class)


def project_predictions(seg: SegmentMap, predictions) -> tuple[np.ndarray, InstanceLabeling]:
    """Paint every pixel with its segment's predicted class; each segment is one instance."""
    predictions = np.asarray(predictions, dtype=np.int64)
    if len(predictions) != seg.n_regions:
        raise InputError(f"{len(predictions)} predictions for {seg.n_regions} segments")
    inst = SegmentMap.from_labels(seg.labels)
    # from_labels preserves first-appearance order, so ids match for a dense map
    m = inst.labels >= 0
    classes = np.full(seg.shape, UNLABELED, dtype=np.int64)
    classes[m] = predictions[seg.labels[m]]
    remap = np.full(max(seg.n_regions, 1), -1, dtype=np.int64)
    remap[seg.labels[m]] = inst.labels[m]
    inst_class = np.zeros(inst.n_regions, dtype=np.int64)
    inst_class[remap[remap >= 0]] = predictions[np.flatnonzero(remap >= 0)]
    return classes, InstanceLabeling(inst.labels, classes, inst_class, inst.sizes)


def confusion(pred: np.ndarray, gt: np.ndarray, K: int) -> np.ndarray:
    """K x K counts; entry (i, j) = pixels of truth i predicted j.  Unlabeled truth is skipped."""
    cm, _ = confusion_with_misses(pred, gt, K)
    return cm


def confusion_with_misses(pred, gt, K: int):
    """Confusion plus per-class counts of labeled pixels that received no prediction."""
    _check_shape(pred, gt, "confusion")
    pred = np.asarray(pred, dtype=np.int64).ravel()
    gt = np.asarray(gt, dtype=np.int64).ravel()
    lab = gt >= 0
    if lab.any() and (gt[lab].max() >= K or pred[lab].max() >= K):
        raise InputError(f"class id outside [0, {K})")
    hit = lab & (pred >= 0)
    cm = np.bincount(gt[hit] * K + pred[hit], minlength=K * K).reshape(K, K)
    missed = np.bincount(gt[lab & (pred < 0)], minlength=K)
    return cm.astype(np.int64), missed.astype(np.int64)


@dataclass
class Metrics:
    recall: np.ndarray  # NaN for classes absent from the truth
    class_accuracy: float
    pixel_accuracy: float


def metrics(m: np.ndarray, missed=None) -> Metrics:
    """Per-class recall, their mean over present classes, and overall pixel accuracy.

    ``missed`` optionally adds labeled-but-unpredicted pixels to each row total.
    """
    m = np.asarray(m, dtype=np.int64)
    rows = m.sum(axis=1) + (0 if missed is None else np.asarray(missed))
    total = rows.sum()
    if total == 0:
        raise InputError("confusion matrix is empty")
    present = rows > 0
    recall = np.full(len(m), np.nan)
    recall[present] = np.diag(m)[present] / rows[present]
    return Metrics(recall, float(recall[present].mean()), float(np.trace(m) / total))


def write_metrics_csv(path, cm, names, met: Metrics, comments=()) -> None:
    with open(path, "w", newline="") as f:
        for c in comments:
            f.write(f"# {c}\n")
        w = csv.writer(f)
        w.writerow(["truth\\pred"] + list(names))
        for i, row in enumerate(cm):
            w.writerow([names[i]] + [int(x) for x in row])
        w.writerow([])
        w.writerow(["class", "recall"])
        for n, r in zip(names, met.recall):
            w.writerow([n, "" if np.isnan(r) else f"{r:.6f}"])
        w.writerow([])
        w.writerow(["class_accuracy", f"{met.class_accuracy:.6f}"])
        w.writerow(["pixel_accuracy", f"{met.pixel_accuracy:.6f}"])


@dataclass
class AblationResult:
    groups: list
    classes: list  # class ids kept as rows
    accuracy: np.ndarray  # (n_classes, n_groups); last group is "all"
    names: list = field(default_factory=list)

    def write_csv(self, path, comments=()) -> None:
        with open(path, "w", newline="") as f:
            for c in comments:
                f.write(f"# {c}\n")
            w = csv.writer(f)
            label = [self.names[c] if self.names else str(c) for c in self.classes]
            w.writerow(["group"] + label)
            for j, g in enumerate(self.groups):
                w.writerow([g] + [f"{a:.6f}" for a in self.accuracy[:, j]])


def feature_ablation(
    X_train,
    y_train,
    X_val,
    y_val,
    layout: FeatureLayout,
    groups=ABLATION_GROUPS,
    classes=None,
    cfg: rf.ForestConfig | None = None,
    names=None,
) -> AblationResult:
    """One-vs-rest accuracy of a forest trained on each feature group alone.

    A final ``"all"`` column uses every feature.  Classes missing from the
    validation labels are dropped with a warning.
    """
    cfg = cfg or rf.ForestConfig(n_trees=50)
    X_train = np.asarray(X_train, float)
    X_val = np.asarray(X_val, float)
    y_train = np.asarray(y_train, np.int64)
    y_val = np.asarray(y_val, np.int64)
    groups = [g for g in groups if g != "all"] + ["all"]
    cols = {g: layout.columns(g) for g in groups}
    if classes is None:
        classes = sorted(set(np.unique(y_train).tolist()) | set(np.unique(y_val).tolist()))
    kept = []
    for c in classes:
        if not (y_train == c).any():
            raise InputError(f"class {c} absent from the training set")
        if not (y_val == c).any():
            warnings.warn(f"class {c} absent from validation set; row dropped")
            continue
        kept.append(int(c))
    acc = np.zeros((len(kept), len(groups)))
    for i, c in enumerate(kept):
        bt = (y_train == c).astype(np.int64)
        bv = (y_val == c).astype(np.int64)
        for j, g in enumerate(groups):
            sub = cfg
            d = len(cols[g])
            if cfg.features_per_split is not None and cfg.features_per_split > d:
                sub = rf.ForestConfig(**{**rf.config_dict(cfg), "features_per_split": d})
            f = rf.train(X_train[:, cols[g]], bt, sub, n_classes=2)
            pred, _ = rf.predict_many(f, X_val[:, cols[g]])
            acc[i, j] = float(np.mean(pred == bv))
    return AblationResult(groups, kept, acc, list(names) if names else [])
