"""
Evaluation metrics.

``iou`` is the binary occupied-vs-empty IoU; ``miou`` the unweighted mean of
per-class IoU over the semantic classes (empty excluded) present in the
prediction or the ground truth. Voxels labelled 255 in either are ignored.
An empty union scores 1.0.
"""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..errors import ShapeError
from .losses import IGNORE_LABEL


class MetricReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    iou: float
    miou: float
    tp: int
    fp: int
    fn: int
    class_iou: Dict[int, float]

    @property
    def data(self) -> dict:
        """Flat dict: summary first, then ``iou_class_<c>`` in class order."""
        out = {"iou": self.iou, "miou": self.miou, "tp": self.tp, "fp": self.fp, "fn": self.fn}
        for c in sorted(self.class_iou):
            out[f"iou_class_{c}"] = self.class_iou[c]
        return out

    @property
    def md(self) -> str:
        rows = "\n".join(f"| {k} | {v} |" for k, v in self.data.items())
        return f"| metric | value |\n|---|---|\n{rows}"


def _ratio(tp: int, fp: int, fn: int) -> float:
    union = tp + fp + fn
    return 1.0 if union == 0 else tp / union


def confusion_matrix(pred, gt, num_classes: int) -> np.ndarray:
    """``conf[g, p]`` counts voxels with ground truth ``g`` predicted as ``p``."""
    return np.bincount(gt * num_classes + pred, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def iou_miou(pred_labels, gt_labels, num_classes: Optional[int] = None) -> MetricReport:
    pred = np.asarray(pred_labels).astype(np.int64)
    gt = np.asarray(gt_labels).astype(np.int64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    keep = (gt != IGNORE_LABEL) & (pred != IGNORE_LABEL)
    pred, gt = pred[keep], gt[keep]
    if pred.size and (pred.min() < 0 or gt.min() < 0):
        raise ValueError("labels must be nonnegative")
    top = int(max(pred.max(initial=0), gt.max(initial=0)))
    k = num_classes or top + 1
    if top >= k:
        raise ValueError(f"label {top} out of range for {k} classes")
    conf = confusion_matrix(pred, gt, k)

    tp = int(conf[1:, 1:].sum())
    fp = int(conf[0, 1:].sum())
    fn = int(conf[1:, 0].sum())

    class_iou = {}
    for c in range(1, k):
        c_tp = int(conf[c, c])
        c_fp = int(conf[:, c].sum()) - c_tp
        c_fn = int(conf[c, :].sum()) - c_tp
        if c_tp + c_fp + c_fn:
            class_iou[c] = c_tp / (c_tp + c_fp + c_fn)
    miou = float(np.mean(list(class_iou.values()))) if class_iou else 1.0
    return MetricReport(iou=_ratio(tp, fp, fn), miou=miou, tp=tp, fp=fp, fn=fn, class_iou=class_iou)
