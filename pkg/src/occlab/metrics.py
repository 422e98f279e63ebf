"""Voxel-grid evaluation: confusion accumulation and IoU-family scores.

Voxels whose ground-truth mask is invalid or occluded are skipped (as are
unknown-labeled gt voxels, which carry no supervision). The geometry score
collapses labels to occupied-vs-free; per-class IoU covers semantic classes
only, and mIoU averages the classes present in gt or prediction. Undefined
scores are reported as None, never as zero.
"""

from __future__ import annotations

import numpy as np

from .core import LabelSet
from .errors import ShapeError
from .voxel import VoxelGrid


class ConfusionMatrix:
    """k x k counts indexed [gt, pred] over the label-set order."""

    def __init__(self, labelset: LabelSet):
        self.labelset = labelset
        k = len(labelset)
        self.counts = np.zeros((k, k), dtype=np.int64)
        self.mask_skipped = 0
        self._index = np.full(labelset.max_id + 1, -1, dtype=np.int64)
        for i, label in enumerate(labelset):
            self._index[label.id] = i

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.labelset is not self.labelset and len(other.labelset) != len(self.labelset):
            raise ShapeError("cannot merge confusion matrices over different label sets")
        self.counts += other.counts
        self.mask_skipped += other.mask_skipped
        return self


def accumulate(pred: VoxelGrid, gt: VoxelGrid, cm: ConfusionMatrix) -> ConfusionMatrix:
    """Add one grid pair into the confusion matrix."""
    if pred.dims != gt.dims:
        raise ShapeError(f"prediction dims {pred.dims} != ground truth dims {gt.dims}")
    ls = cm.labelset
    keep = gt.valid & ~gt.occluded & (gt.labels != ls.unknown_id)
    cm.mask_skipped += int((~keep).sum())
    gt_idx = cm._index[gt.labels[keep].astype(np.int64)]
    pred_idx = cm._index[pred.labels[keep].astype(np.int64)]
    k = len(ls)
    flat = np.bincount(gt_idx * k + pred_idx, minlength=k * k)
    cm.counts += flat.reshape(k, k)
    return cm


def scores(cm: ConfusionMatrix) -> dict:
    """Geometry IoU/precision/recall, per-class IoU, and mIoU.

    Geometry treats any non-free class as occupied. Classes absent from both
    gt and prediction are excluded from mIoU; an empty matrix yields None
    everywhere.
    """
    ls = cm.labelset
    counts = cm.counts
    ids = np.array([l.id for l in ls])
    free = ids == ls.free_id
    occ = ~free

    tp = int(counts[np.ix_(occ, occ)].sum())
    fp = int(counts[np.ix_(free, occ)].sum())
    fn = int(counts[np.ix_(occ, free)].sum())

    def ratio(num, den):
        return num / den if den > 0 else None

    iou = ratio(tp, tp + fp + fn)
    precision = ratio(tp, tp + fp)
    recall = ratio(tp, tp + fn)

    per_class = {}
    present_ious = []
    semantic = set(int(i) for i in ls.semantic_ids())
    for i, label in enumerate(ls):
        if label.id not in semantic:
            continue
        inter = int(counts[i, i])
        gt_total = int(counts[i, :].sum())
        pred_total = int(counts[:, i].sum())
        union = gt_total + pred_total - inter
        if union == 0:
            per_class[label.name] = None
            continue
        ciou = inter / union
        per_class[label.name] = ciou
        present_ious.append(ciou)

    miou = sum(present_ious) / len(present_ious) if present_ious else None
    return {
        "iou": iou,
        "per_class_iou": per_class,
        "miou": miou,
        "precision": precision,
        "recall": recall,
    }
