import math

import numpy as np
import pytest

from oceanssc.attention.gsga import GsgaParams, bilinear_sample, gsga
from oceanssc.attention.kernels import depth_similarity, kernel_phi, sga3d_cluster, sga_cluster
from oceanssc.attention.oracles import ORACLES, oracle_report
from oceanssc.attention.sga3d import Sga3dParams, run_sga3d
from oceanssc.attention.window import window_attention, window_partition, window_reverse
from oceanssc.errors import ShapeError
from oceanssc.geometry.camera import DepthBinning
from oceanssc.grouping.clusters import build_clusters
from oceanssc.grouping.masks import InstanceMask, downsample_mask

BINNING = DepthBinning(d_min=0.0, d_max=4.0, num_bins=4)


def test_kernel_phi_examples():
    np.testing.assert_allclose(kernel_phi([0.0, 1.0, -1.0, 2.5]), [1.0, 2.0, math.exp(-1.0), 3.5])
    assert np.all(kernel_phi(np.linspace(-30, 30, 61)) > 0)


# ---------------------------------------------------------------------------
# SGA / SGA3D
# ---------------------------------------------------------------------------

def test_sga_single_key_returns_its_value(rng):
    Q, K, V = rng.standard_normal((5, 3)), rng.standard_normal((1, 3)), rng.standard_normal((1, 4))
    np.testing.assert_allclose(sga_cluster(Q, K, V), np.repeat(V, 5, axis=0), rtol=1e-12)


def test_sga_identical_keys_average_values(rng):
    Q = rng.standard_normal((3, 4))
    K = np.repeat(rng.standard_normal((1, 4)), 6, axis=0)
    V = rng.standard_normal((6, 2))
    np.testing.assert_allclose(sga_cluster(Q, K, V), np.repeat(V.mean(axis=0, keepdims=True), 3, axis=0),
                               rtol=1e-12)


def test_sga_without_keys_returns_queries(rng):
    Q = rng.standard_normal((2, 3))
    np.testing.assert_array_equal(sga_cluster(Q, np.zeros((0, 3)), np.zeros((0, 3))), Q)


def test_sga_output_is_convex_combination_of_values(rng):
    Q, K = rng.standard_normal((3, 4)), rng.standard_normal((6, 4))
    weights = sga_cluster(Q, K, np.eye(6))
    assert np.all(weights > 0)
    np.testing.assert_allclose(weights.sum(axis=1), 1.0, rtol=1e-12)
    V = rng.standard_normal((6, 5))
    np.testing.assert_allclose(sga_cluster(Q, K, V), weights @ V, rtol=1e-10, atol=1e-12)


def test_sga_rejects_mismatched_widths(rng):
    with pytest.raises(ShapeError):
        sga_cluster(rng.standard_normal((2, 3)), rng.standard_normal((4, 2)), rng.standard_normal((4, 3)))


def test_sga3d_with_unit_similarity_is_sga(rng):
    Q, K, V = rng.standard_normal((4, 5)), rng.standard_normal((7, 5)), rng.standard_normal((7, 3))
    np.testing.assert_array_equal(sga3d_cluster(Q, K, V, np.ones((4, 7))), sga_cluster(Q, K, V))


def test_sga3d_single_key_scales_by_similarity(rng):
    Q, K, V = rng.standard_normal((3, 2)), rng.standard_normal((1, 2)), rng.standard_normal((1, 4))
    A = np.array([[0.25], [1.0], [0.0]])
    expected = A * V
    np.testing.assert_allclose(sga3d_cluster(Q, K, V, A), expected, rtol=1e-12, atol=1e-15)


def test_sga3d_weighted_denominator_guards_zero_rows(rng):
    Q, K, V = rng.standard_normal((2, 3)), rng.standard_normal((3, 3)), rng.standard_normal((3, 2))
    A = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    out = sga3d_cluster(Q, K, V, A, weighted_denominator=True)
    assert np.all(np.isfinite(out))
    np.testing.assert_array_equal(out[0], [0.0, 0.0])
    np.testing.assert_allclose(out[1], sga_cluster(Q[1:], K, V)[0], rtol=1e-12)


def _two_instance_scene(rng, proposals=12, channels=4):
    ids = np.zeros((8, 8), dtype=np.int64)
    ids[:4, :4] = 1
    ids[4:, 4:] = 2
    mask = InstanceMask(ids)
    masks = {s: downsample_mask(mask, s) for s in (1, 2)}
    proposal_ids = rng.integers(0, 3, proposals)
    proposal_ids[:2] = [1, 2]
    pixel_features = {s: rng.standard_normal((64 // s ** 2, channels)) for s in masks}
    depth_dists = {s: rng.dirichlet(np.ones(BINNING.num_bins), 64 // s ** 2) for s in masks}
    return dict(proposal_ids=proposal_ids, masks=masks, pixel_features=pixel_features,
                depth_dists=depth_dists, features=rng.standard_normal((proposals, channels)),
                depths=rng.uniform(0.1, 3.9, proposals))


def test_run_sga3d_without_proposals_is_a_no_op(rng):
    scene = _two_instance_scene(rng)
    clusters = build_clusters(np.zeros(0, dtype=np.int64), scene["masks"])
    out = run_sga3d(np.zeros((0, 4)), clusters, scene["pixel_features"], scene["depth_dists"],
                    np.zeros(0), BINNING)
    assert out.shape == (0, 4)


def test_run_sga3d_does_not_depend_on_proposal_order(rng):
    """Reordering proposals reorders the output rows and nothing else."""
    scene = _two_instance_scene(rng)
    params = Sga3dParams(wo=rng.standard_normal((4, 4)))
    perm = rng.permutation(len(scene["proposal_ids"]))

    def run(order):
        clusters = build_clusters(scene["proposal_ids"][order], scene["masks"])
        return run_sga3d(scene["features"][order], clusters, scene["pixel_features"],
                         scene["depth_dists"], scene["depths"][order], BINNING, params)

    base = run(np.arange(len(perm)))
    assert np.any(base != scene["features"])
    np.testing.assert_allclose(run(perm), base[perm], rtol=1e-12, atol=1e-14)


def test_run_sga3d_does_not_depend_on_cluster_order(rng):
    """Swapping the two instance IDs swaps which cluster is processed first."""
    scene = _two_instance_scene(rng)
    swap = np.array([0, 2, 1])

    def run(proposal_ids, masks):
        clusters = build_clusters(proposal_ids, masks)
        return run_sga3d(scene["features"], clusters, scene["pixel_features"],
                         scene["depth_dists"], scene["depths"], BINNING)

    swapped_masks = {s: InstanceMask(swap[m.ids], count=m.count) for s, m in scene["masks"].items()}
    np.testing.assert_array_equal(run(swap[scene["proposal_ids"]], swapped_masks),
                                  run(scene["proposal_ids"], scene["masks"]))


def test_depth_similarity_one_hot():
    dists = np.eye(4)[[2, 0, 3]]
    A = depth_similarity([2.5, 0.1], dists, BINNING)
    assert A.shape == (2, 3)
    np.testing.assert_array_equal(A, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def test_depth_similarity_uniform():
    A = depth_similarity([0.5, 1.5, 3.9], np.full((5, 4), 0.25), BINNING)
    np.testing.assert_allclose(A, 1.0 / BINNING.num_bins)


# ---------------------------------------------------------------------------
# GSGA
# ---------------------------------------------------------------------------

def test_bilinear_integer_midpoint_and_clamp():
    fmap = np.arange(12, dtype=np.float64).reshape(3, 4, 1)
    assert bilinear_sample(fmap, [2.0, 1.0])[0] == fmap[1, 2, 0]
    assert bilinear_sample(fmap, [0.5, 0.5])[0] == pytest.approx((0 + 1 + 4 + 5) / 4)
    assert bilinear_sample(fmap, [-3.0, 10.0])[0] == fmap[2, 0, 0]
    assert bilinear_sample(fmap, [3.0, 2.0])[0] == fmap[2, 3, 0]


def _single_point_params(rng, channels=4, image_channels=3, sam_channels=2):
    params = GsgaParams.init(rng, channels, image_channels, sam_channels, points=1)
    params.bypass_gate = True
    return params


def test_gsga_degenerate_reads_projected_feature(rng):
    """One point, zero offsets and no gate: the output is the projected feature under each query."""
    params = _single_point_params(rng)
    img, sam = rng.standard_normal((4, 5, 3)), rng.standard_normal((4, 5, 2))
    rows, cols = np.array([0, 3, 2]), np.array([4, 1, 0])
    positions = np.stack([cols, rows], axis=1).astype(np.float64)
    out = gsga(rng.standard_normal((3, 4)), positions, img, sam, params)
    np.testing.assert_allclose(out, img[rows, cols] @ params.w, rtol=1e-12, atol=1e-14)


def test_gsga_closed_gate_suppresses_output(rng):
    params = GsgaParams.init(rng, 4, 3, 2, points=3, gate_bias=-1e3)
    img, sam = rng.standard_normal((4, 4, 3)), rng.standard_normal((4, 4, 2))
    out = gsga(rng.standard_normal((5, 4)), rng.uniform(0, 3, (5, 2)), img, sam, params)
    np.testing.assert_allclose(out, 0.0, atol=1e-12)


def test_gsga_bypass_ignores_segmentation_features(rng):
    params = GsgaParams.init(rng, 4, 3, 2, points=3)
    params.offset_w = 0.5 * rng.standard_normal(params.offset_w.shape)
    params.bypass_gate = True
    q, pos = rng.standard_normal((5, 4)), rng.uniform(0, 3, (5, 2))
    img = rng.standard_normal((4, 4, 3))
    a = gsga(q, pos, img, rng.standard_normal((4, 4, 2)), params)
    b = gsga(q, pos, img, rng.standard_normal((4, 4, 2)), params)
    np.testing.assert_array_equal(a, b)


def test_gsga_no_queries(rng):
    params = _single_point_params(rng)
    out = gsga(np.zeros((0, 4)), np.zeros((0, 2)), np.zeros((2, 2, 3)), np.zeros((2, 2, 2)), params)
    assert out.shape == (0, 4)


# ---------------------------------------------------------------------------
# window attention
# ---------------------------------------------------------------------------

def test_window_of_one_returns_values(rng):
    q, kv = rng.standard_normal((4, 6, 3)), rng.standard_normal((4, 6, 3))
    np.testing.assert_allclose(window_attention(q, kv, 1), kv, rtol=1e-12)


def test_window_attention_follows_window_permutation(rng):
    q, kv = rng.standard_normal((8, 8, 3)), rng.standard_normal((8, 8, 3))
    perm = np.array([3, 1, 0, 2])

    def shuffle(bev):
        return window_reverse(window_partition(bev, 4)[perm], 4, 8, 8)

    out = window_attention(q, kv, 4)
    np.testing.assert_allclose(window_attention(shuffle(q), shuffle(kv), 4), shuffle(out), rtol=1e-12)


def test_window_rejects_indivisible_grid(rng):
    with pytest.raises(ShapeError):
        window_attention(np.zeros((6, 4, 2)), np.zeros((6, 4, 2)), 4)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("op", sorted(ORACLES))
def test_kernels_match_oracles(op):
    report = oracle_report(op, trials=20, seed=3)
    assert report.passed, f"{op} deviates by {report.max_deviation:.3e}"
    assert report.trials == 20


def test_unknown_oracle():
    with pytest.raises(KeyError):
        oracle_report("nope")
