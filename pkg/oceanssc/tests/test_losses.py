import math

import numpy as np
import pytest
from pydantic import ValidationError

from oceanssc.errors import ShapeError
from oceanssc.geometry.camera import DepthBinning
from oceanssc.losses.losses import (IGNORE_LABEL, LAMBDA_DEPTH, LAMBDA_RECON, SemanticOccupancy,
                                    cross_entropy_loss, depth_loss, scal_losses, total_loss)
from oceanssc.losses.metrics import iou_miou

BINNING = DepthBinning(d_min=1.0, d_max=5.0, num_bins=4)


def _labels(rng, shape=(4, 4, 2), classes=4):
    labels = rng.integers(0, classes, shape)
    labels.flat[:classes] = np.arange(classes)
    return labels


# ---------------------------------------------------------------------------
# occupancy losses
# ---------------------------------------------------------------------------

def test_cross_entropy_of_uniform_logits(rng):
    occ = SemanticOccupancy(np.zeros((4, 4, 2, 4)), _labels(rng))
    assert cross_entropy_loss(occ) == pytest.approx(math.log(4), abs=1e-12)


def test_cross_entropy_skips_ignored_voxels(rng):
    labels = _labels(rng)
    logits = np.zeros((4, 4, 2, 4))
    labels[3, 3, :] = IGNORE_LABEL
    logits[3, 3, :, 0] = 1e3
    assert cross_entropy_loss(SemanticOccupancy(logits, labels)) == pytest.approx(math.log(4), abs=1e-12)


def test_all_ignored_raises():
    occ = SemanticOccupancy(np.zeros((2, 2, 1, 3)), np.full((2, 2, 1), IGNORE_LABEL))
    with pytest.raises(ValueError):
        cross_entropy_loss(occ)


def test_occupancy_rejects_bad_labels():
    with pytest.raises(ValueError):
        SemanticOccupancy(np.zeros((2, 2, 1, 3)), np.full((2, 2, 1), 3))
    with pytest.raises(ShapeError):
        SemanticOccupancy(np.zeros((2, 2, 1, 3)), np.zeros((2, 2, 2), dtype=np.int64))


def test_scal_of_confident_correct_prediction(rng):
    labels = _labels(rng)
    logits = 50.0 * np.eye(4)[labels]
    sem, geo = scal_losses(SemanticOccupancy(logits, labels))
    assert sem == pytest.approx(0.0, abs=1e-9)
    assert geo == pytest.approx(0.0, abs=1e-9)


def test_scal_penalises_wrong_prediction(rng):
    labels = _labels(rng)
    logits = 50.0 * np.eye(4)[(labels + 1) % 4]
    sem, geo = scal_losses(SemanticOccupancy(logits, labels))
    assert sem > 1.0
    assert geo > 0.0


# ---------------------------------------------------------------------------
# depth
# ---------------------------------------------------------------------------

def test_depth_loss_of_one_hot_targets():
    depth = np.array([[1.5, 2.5], [3.5, 4.5]])
    pred = np.eye(4)[[[0, 1], [2, 3]]]
    assert depth_loss(pred, depth, BINNING) == pytest.approx(0.0, abs=1e-12)


def test_depth_loss_of_uniform_prediction():
    depth = np.array([[1.5, 0.0], [3.5, 4.5]])
    assert depth_loss(np.full((2, 2, 4), 0.25), depth, BINNING) == pytest.approx(math.log(4), abs=1e-12)


def test_depth_loss_needs_valid_pixels():
    with pytest.raises(ValueError):
        depth_loss(np.full((2, 2, 4), 0.25), np.zeros((2, 2)), BINNING)


# ---------------------------------------------------------------------------
# total
# ---------------------------------------------------------------------------

def test_total_with_unit_components():
    report = total_loss(1.0, 1.0, 1.0, 1.0, 1.0)
    assert report.total == pytest.approx(3.101, abs=1e-12)
    assert list(report.data)[:5] == ["l_ce", "l_scal_sem", "l_scal_geo", "l_d", "l_recon"]
    assert report.md.startswith("| term | value |")


@pytest.mark.parametrize("term, slope", [
    (0, 1.0), (1, 1.0), (2, 1.0), (3, LAMBDA_DEPTH), (4, LAMBDA_RECON),
])
def test_total_is_affine_in_each_term(term, slope):
    base = [0.7, 0.3, 0.2, 1.4, 2.5]
    bumped = list(base)
    bumped[term] += 0.5
    delta = total_loss(*bumped).total - total_loss(*base).total
    assert delta == pytest.approx(0.5 * slope, abs=1e-12)


def test_total_rejects_non_finite_components():
    with pytest.raises((ValueError, ValidationError)):
        total_loss(float("nan"), 1.0, 1.0, 1.0, 1.0)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def test_perfect_prediction(rng):
    labels = _labels(rng)
    report = iou_miou(labels, labels)
    assert report.iou == 1.0
    assert report.miou == 1.0
    assert report.fp == 0 and report.fn == 0


def test_disjoint_prediction():
    gt = np.zeros((2, 2, 1), dtype=np.int64)
    pred = np.zeros_like(gt)
    gt[0, 0, 0] = 1
    pred[1, 1, 0] = 1
    report = iou_miou(pred, gt)
    assert report.iou == 0.0
    assert report.class_iou == {1: 0.0}


def test_hand_counted_metrics():
    gt = np.zeros((4, 4, 2), dtype=np.int64)
    pred = np.zeros_like(gt)
    gt[0, 0, 0] = gt[0, 1, 0] = 1
    gt[1, 0, 0] = 2
    pred[0, 0, 0] = pred[2, 2, 1] = 1
    pred[0, 1, 0] = pred[1, 0, 0] = 2

    report = iou_miou(pred, gt, num_classes=3)
    assert (report.tp, report.fp, report.fn) == (3, 1, 0)
    assert report.iou == pytest.approx(0.75)
    assert report.class_iou[1] == pytest.approx(1 / 3)
    assert report.class_iou[2] == pytest.approx(1 / 2)
    assert report.miou == pytest.approx(5 / 12)
    assert report.data["iou_class_2"] == pytest.approx(0.5)


def test_metrics_ignore_label():
    gt = np.array([[[1, IGNORE_LABEL]]])
    pred = np.array([[[1, 0]]])
    report = iou_miou(pred, gt)
    assert (report.tp, report.fp, report.fn) == (1, 0, 0)


def test_empty_scene_scores_one():
    empty = np.zeros((2, 2, 2), dtype=np.int64)
    report = iou_miou(empty, empty)
    assert report.iou == 1.0 and report.miou == 1.0


def test_metrics_unchanged_by_consistent_relabelling(rng):
    gt = _labels(rng, shape=(6, 6, 3))
    pred = _labels(rng, shape=(6, 6, 3))
    gt[0, 0, 0] = IGNORE_LABEL
    relabel = np.array([0, 3, 1, 2])

    def apply(labels):
        out = labels.copy()
        keep = labels != IGNORE_LABEL
        out[keep] = relabel[labels[keep]]
        return out

    report = iou_miou(pred, gt)
    moved = iou_miou(apply(pred), apply(gt))
    assert (moved.tp, moved.fp, moved.fn) == (report.tp, report.fp, report.fn)
    assert moved.iou == report.iou
    assert moved.miou == pytest.approx(report.miou, rel=1e-12)
    for c, value in report.class_iou.items():
        assert moved.class_iou[int(relabel[c])] == value


def test_metrics_reject_ground_truth_beyond_class_count():
    with pytest.raises(ValueError):
        iou_miou(np.array([[[0, 1, 1]]]), np.array([[[0, 1, 3]]]), num_classes=3)


def test_metrics_reject_prediction_beyond_class_count():
    """A prediction of class 3 must not be folded into another class row."""
    with pytest.raises(ValueError):
        iou_miou(np.array([[[3, 0]]]), np.array([[[0, 0]]]), num_classes=3)
