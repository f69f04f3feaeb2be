"""
Training losses.

    occ = SemanticOccupancy(logits, labels)
    ce = cross_entropy_loss(occ)
    sem, geo = scal_losses(occ)
    report = total_loss(l_ce=ce, l_scal_sem=sem, l_scal_geo=geo, l_d=d, l_recon=r)

    report.data    # flat dict, stable key order
    report.md      # Markdown table

The affinity ("scal") losses follow the precision / recall / specificity
form used by MonoScene-style SSC models; every log is floored at 1e-8.
Each loss has a ``*_vjp`` returning the gradient with respect to its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.special import log_softmax

from ..errors import ShapeError
from ..geometry.camera import DepthBinning, depth_to_bin
from ..utils.nn import softmax, softmax_vjp

IGNORE_LABEL = 255
LOG_FLOOR = 1e-8
LAMBDA_DEPTH = 0.001
LAMBDA_RECON = 0.1


@dataclass
class SemanticOccupancy:
    """``logits``: x*y*z*(Mc+1); ``labels``: x*y*z in ``{0..Mc} | {255}``."""

    logits: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        self.labels = np.asarray(self.labels).astype(np.int64)
        if self.logits.shape[:-1] != self.labels.shape:
            raise ShapeError(f"logits {self.logits.shape} do not match labels {self.labels.shape}")
        ok = (self.labels >= 0) & (self.labels < self.num_classes) | (self.labels == IGNORE_LABEL)
        if not np.all(ok):
            raise ValueError(f"labels must lie in 0..{self.num_classes - 1} or be {IGNORE_LABEL}")

    @property
    def num_classes(self) -> int:
        """Mc + 1, the empty class included."""
        return self.logits.shape[-1]

    def labelled(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(mask, flat logits, flat labels)`` of the non-ignored voxels."""
        mask = self.labels != IGNORE_LABEL
        if not mask.any():
            raise ValueError("every voxel carries the ignore label")
        return mask, self.logits[mask], self.labels[mask]


def _neg_log(x: float) -> float:
    return -math.log(max(x, LOG_FLOOR))


def _neg_log_grad(x: float) -> float:
    return -1.0 / x if x > LOG_FLOOR else 0.0


# ---------------------------------------------------------------------------
# cross entropy
# ---------------------------------------------------------------------------

def cross_entropy_loss(occupancy: SemanticOccupancy) -> float:
    _, logits, labels = occupancy.labelled()
    logp = log_softmax(logits, axis=1)
    return float(-np.mean(logp[np.arange(len(labels)), labels]))


def cross_entropy_loss_vjp(g: float, occupancy: SemanticOccupancy) -> np.ndarray:
    mask, logits, labels = occupancy.labelled()
    p = softmax(logits, axis=1)
    p[np.arange(len(labels)), labels] -= 1.0
    out = np.zeros_like(occupancy.logits)
    out[mask] = g * p / len(labels)
    return out


# ---------------------------------------------------------------------------
# affinity losses
# ---------------------------------------------------------------------------

def _affinity_terms(prob: np.ndarray, target: np.ndarray, spec_prob: np.ndarray):
    """
    Loss and gradient factors for one binary affinity.

    ``prob`` is the predicted mass of the positive class, ``target`` its 0/1
    ground truth, ``spec_prob`` the mass counted towards specificity.
    Returns ``(loss, g_prob, g_spec_prob)``; terms without support are skipped.
    """
    loss = 0.0
    g_prob = np.zeros_like(prob)
    g_spec = np.zeros_like(prob)
    positives = target.sum()
    negatives = (1.0 - target).sum()
    if positives > 0:
        a = float(np.sum(prob * target))
        b = float(prob.sum())
        precision = a / b if b > 0 else 0.0
        recall = a / positives
        loss += _neg_log(precision) + _neg_log(recall)
        if b > 0:
            g_prob += _neg_log_grad(precision) * (target - precision) / b
        g_prob += _neg_log_grad(recall) * target / positives
    if negatives > 0:
        specificity = float(np.sum(spec_prob * (1.0 - target))) / negatives
        loss += _neg_log(specificity)
        g_spec += _neg_log_grad(specificity) * (1.0 - target) / negatives
    return loss, g_prob, g_spec


def _scal(occupancy: SemanticOccupancy):
    mask, logits, labels = occupancy.labelled()
    p = softmax(logits, axis=1)
    g_p = np.zeros_like(p)

    sem = 0.0
    supported = 0
    for c in range(occupancy.num_classes):
        target = (labels == c).astype(np.float64)
        if target.sum() == 0:
            continue
        loss, g_prob, g_spec = _affinity_terms(p[:, c], target, 1.0 - p[:, c])
        sem += loss
        g_p[:, c] += g_prob - g_spec
        supported += 1
    g_sem = g_p / supported if supported else g_p
    sem = sem / supported if supported else 0.0

    nonempty = (labels != 0).astype(np.float64)
    geo, g_occ, g_empty = _affinity_terms(1.0 - p[:, 0], nonempty, p[:, 0])
    g_geo = np.zeros_like(p)
    g_geo[:, 0] = g_empty - g_occ
    return sem, geo, mask, p, g_sem, g_geo


def scal_losses(occupancy: SemanticOccupancy) -> Tuple[float, float]:
    """``(l_scal_sem, l_scal_geo)``."""
    sem, geo, *_ = _scal(occupancy)
    return float(sem), float(geo)


def scal_losses_vjp(g_sem: float, g_geo: float, occupancy: SemanticOccupancy) -> np.ndarray:
    _, _, mask, p, d_sem, d_geo = _scal(occupancy)
    out = np.zeros_like(occupancy.logits)
    out[mask] = softmax_vjp(g_sem * d_sem + g_geo * d_geo, p, axis=1)
    return out


# ---------------------------------------------------------------------------
# depth
# ---------------------------------------------------------------------------

def _depth_targets(pred_dist, gt_depth, binning: DepthBinning):
    pred = np.asarray(pred_dist, dtype=np.float64)
    gt = np.asarray(gt_depth, dtype=np.float64)
    if pred.shape[:2] != gt.shape or pred.shape[2] != binning.num_bins:
        raise ShapeError(f"depth distribution {pred.shape} does not match depth map {gt.shape}")
    valid = np.isfinite(gt) & (gt > 0)
    if not valid.any():
        raise ValueError("depth map has no valid pixels")
    rows, cols = np.nonzero(valid)
    bins = depth_to_bin(gt[rows, cols], binning)
    return pred, rows, cols, bins


def depth_loss(pred_dist, gt_depth, binning: DepthBinning) -> float:
    """Mean over valid (positive) depth pixels of ``-log pred[bin(depth)]``."""
    pred, rows, cols, bins = _depth_targets(pred_dist, gt_depth, binning)
    picked = np.maximum(pred[rows, cols, bins], LOG_FLOOR)
    return float(-np.mean(np.log(picked)))


def depth_loss_vjp(g: float, pred_dist, gt_depth, binning: DepthBinning) -> np.ndarray:
    pred, rows, cols, bins = _depth_targets(pred_dist, gt_depth, binning)
    picked = pred[rows, cols, bins]
    out = np.zeros_like(pred)
    out[rows, cols, bins] = np.where(picked > LOG_FLOOR, -g / (picked * len(rows)), 0.0)
    return out


# ---------------------------------------------------------------------------
# total
# ---------------------------------------------------------------------------

class LossReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    l_ce: float
    l_scal_sem: float
    l_scal_geo: float
    l_d: float
    l_recon: float
    lambda_d: float = LAMBDA_DEPTH
    lambda_r: float = LAMBDA_RECON
    total: float = 0.0

    @model_validator(mode="after")
    def _finite(self):
        values = self.model_dump()
        bad = [k for k, v in values.items() if not math.isfinite(v)]
        if bad:
            raise ValueError(f"non-finite loss components: {bad}")
        return self

    @property
    def data(self) -> dict:
        return self.model_dump()

    @property
    def md(self) -> str:
        rows = "\n".join(f"| {k} | {v:.6g} |" for k, v in self.data.items())
        return f"| term | value |\n|---|---|\n{rows}"


def combine_losses(l_ce, l_scal_sem, l_scal_geo, l_d, l_recon,
                   lambda_d: float = LAMBDA_DEPTH, lambda_r: float = LAMBDA_RECON) -> float:
    return math.fsum([lambda_d * l_d, lambda_r * l_recon, l_ce, l_scal_geo, l_scal_sem])


def total_loss(l_ce: float, l_scal_sem: float, l_scal_geo: float, l_d: float, l_recon: float,
               lambda_d: float = LAMBDA_DEPTH, lambda_r: float = LAMBDA_RECON) -> LossReport:
    """``total = lambda_d*l_d + lambda_r*l_recon + l_ce + l_scal_geo + l_scal_sem``."""
    total = combine_losses(l_ce, l_scal_sem, l_scal_geo, l_d, l_recon, lambda_d, lambda_r)
    if not math.isfinite(total):
        raise ValueError(f"total loss is not finite ({total!r})")
    return LossReport(l_ce=l_ce, l_scal_sem=l_scal_sem, l_scal_geo=l_scal_geo, l_d=l_d,
                      l_recon=l_recon, lambda_d=lambda_d, lambda_r=lambda_r, total=total)
