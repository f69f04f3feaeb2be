import numpy as np
import pytest

from oceanssc.errors import ShapeError
from oceanssc.geometry.camera import (CameraModel, DepthBinning, GridSpec, back_project,
                                      depth_to_bin, project_points, random_rotation)
from oceanssc.geometry.lifting import (VoxelVolume, lift_features, lift_plan,
                                       occupancy_mask_from_depth, scatter_proposals,
                                       select_proposals)

IDENTITY = CameraModel(fx=1.0, fy=1.0, cx=0.0, cy=0.0)


def test_project_unit_focal():
    """Unit focal identity pinhole divides by depth."""
    u, v, d, valid = project_points([[2.0, 4.0, 2.0]], IDENTITY)
    np.testing.assert_allclose([u[0], v[0], d[0]], [1.0, 2.0, 2.0])
    assert valid[0]


def test_project_with_translation():
    camera = CameraModel(fx=2.0, fy=2.0, cx=10.0, cy=10.0, translation=(0.0, 0.0, 1.0))
    u, v, d, valid = project_points([[1.0, 1.0, 1.0]], camera)
    np.testing.assert_allclose([u[0], v[0], d[0]], [11.0, 11.0, 2.0])
    assert valid[0]


def test_point_behind_camera_is_invalid():
    assert not project_points([[0.0, 0.0, -1.0]], IDENTITY).valid[0]


def test_back_project_inverts_example():
    np.testing.assert_allclose(back_project(1.0, 2.0, 2.0, IDENTITY), [2.0, 4.0, 2.0])


def test_back_project_rejects_nonpositive_depth():
    with pytest.raises(ValueError):
        back_project(0.0, 0.0, 0.0, IDENTITY)


def test_round_trip_random_cameras(rng):
    """Projection after back-projection reproduces (u, v, d) for 1000 random cameras."""
    worst = 0.0
    for _ in range(1000):
        camera = CameraModel.from_matrices(
            rng.uniform(50, 800), rng.uniform(50, 800), rng.uniform(0, 640), rng.uniform(0, 480),
            random_rotation(rng), rng.uniform(-5, 5, 3))
        u, v, d = rng.uniform(0, 640), rng.uniform(0, 480), rng.uniform(0.5, 60.0)
        p = project_points(back_project(u, v, d, camera), camera)
        worst = max(worst, abs(p.u[0] - u) / 640, abs(p.v[0] - v) / 480, abs(p.d[0] - d) / 60)
    assert worst < 1e-9, f"round trip error {worst:.3e}"


def test_camera_rejects_non_orthonormal_rotation():
    with pytest.raises(ValueError):
        CameraModel(fx=1.0, fy=1.0, cx=0.0, cy=0.0,
                    rotation=((2.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)))


@pytest.mark.parametrize("depth, expected", [(2.0, 0), (9.99, 7), (11.0, 7), (1.0, 0)])
def test_depth_to_bin(depth, expected):
    binning = DepthBinning(d_min=2.0, d_max=10.0, num_bins=8)
    assert int(depth_to_bin(depth, binning)) == expected


def test_depth_to_bin_is_monotone(rng):
    binning = DepthBinning(d_min=2.0, d_max=10.0, num_bins=8)
    bins = depth_to_bin(np.sort(rng.uniform(0.0, 12.0, 500)), binning)
    assert np.all(np.diff(bins) >= 0)


# ---------------------------------------------------------------------------
# lifting
# ---------------------------------------------------------------------------

def _lift_setup():
    """One pixel looking down +z; the two bin centres land in voxels (0,0,0) and (0,0,1)."""
    camera = CameraModel(fx=1.0, fy=1.0, cx=0.0, cy=0.0)
    binning = DepthBinning(d_min=0.0, d_max=2.0, num_bins=2)
    grid = GridSpec(dims=(1, 1, 2), origin=(-0.5, -0.5, 0.0), resolution=1.0)
    return camera, binning, grid


def test_lift_zero_distribution_gives_zero_volume():
    camera, binning, grid = _lift_setup()
    volume = lift_features(np.ones((1, 1, 2)), np.zeros((1, 1, 2)), camera, binning, grid, stride=1)
    assert not volume.data.any()


def test_lift_scatter_example():
    camera, binning, grid = _lift_setup()
    context = np.array([[[4.0, 8.0]]])
    dist = np.array([[[0.25, 0.75]]])
    volume = lift_features(context, dist, camera, binning, grid, stride=1)
    np.testing.assert_allclose(volume.data[0, 0, 0], [1.0, 2.0])
    np.testing.assert_allclose(volume.data[0, 0, 1], [3.0, 6.0])
    np.testing.assert_allclose(volume.data.sum(axis=(0, 1, 2)), [4.0, 8.0])


def test_lift_rejects_shape_mismatch():
    camera, binning, grid = _lift_setup()
    with pytest.raises(ShapeError):
        lift_features(np.ones((1, 1, 2)), np.ones((1, 2, 2)), camera, binning, grid, stride=1)


def test_lift_conserves_in_grid_mass(desk_config, rng):
    """Volume sum equals the sum over in-grid (pixel, bin) pairs of dist * context."""
    camera, grid, binning = desk_config.scene_camera, desk_config.grid, desk_config.binning
    h, w = desk_config.feature_shape(8)
    context = rng.standard_normal((h, w, 3))
    dist = rng.dirichlet(np.ones(binning.num_bins), size=(h, w))
    plan = lift_plan((h, w), camera, binning, grid, stride=8)
    volume = lift_features(context, dist, camera, binning, grid, 8, plan)

    weights = dist.reshape(-1, binning.num_bins)[plan.pixel, plan.bin]
    expected = (weights[:, None] * context.reshape(-1, 3)[plan.pixel]).sum(axis=0)
    np.testing.assert_allclose(volume.data.sum(axis=(0, 1, 2)), expected, rtol=1e-10, atol=1e-9)
    assert plan.pixel.size > 0, "desk camera should see part of the grid"


# ---------------------------------------------------------------------------
# occupancy and proposals
# ---------------------------------------------------------------------------

def test_occupancy_from_empty_depth():
    camera, _, grid = _lift_setup()
    assert not occupancy_mask_from_depth(np.zeros((3, 3)), camera, grid).any()


def test_occupancy_single_pixel():
    camera = CameraModel(fx=1.0, fy=1.0, cx=0.0, cy=0.0)
    grid = GridSpec(dims=(4, 4, 4), origin=(-2.0, -2.0, 0.0), resolution=1.0)
    depth = np.zeros((2, 2))
    depth[1, 1] = 1.5  # (u, v) = (1, 1) -> point (1.5, 1.5, 1.5)
    mask = occupancy_mask_from_depth(depth, camera, grid)
    assert mask.sum() == 1
    assert mask[3, 3, 1]


def test_occupancy_is_idempotent():
    camera = CameraModel(fx=10.0, fy=10.0, cx=0.0, cy=0.0)
    grid = GridSpec(dims=(4, 4, 4), origin=(-2.0, -2.0, 0.0), resolution=1.0)
    depth = np.zeros((2, 2))
    depth[0, 0] = 1.5
    depth[0, 1] = 1.5  # (0.15, 0, 1.5): same voxel
    assert occupancy_mask_from_depth(depth, camera, grid).sum() == 1


def test_select_proposals_empty_and_single():
    grid = GridSpec(dims=(2, 2, 1), origin=(-1.0, -1.0, 1.0), resolution=1.0)
    volume = VoxelVolume(grid, np.arange(8, dtype=np.float64).reshape(2, 2, 1, 2))
    assert select_proposals(volume, np.zeros((2, 2, 1), bool), IDENTITY).count == 0

    mask = np.zeros((2, 2, 1), bool)
    mask[1, 0, 0] = True
    props = select_proposals(volume, mask, IDENTITY)
    assert props.count == 1
    np.testing.assert_array_equal(props.features[0], volume.data[1, 0, 0])


def test_select_proposals_raster_order(rng):
    grid = GridSpec(dims=(3, 2, 2), origin=(0.0, 0.0, 1.0), resolution=1.0)
    volume = VoxelVolume(grid, rng.standard_normal((3, 2, 2, 4)))
    props = select_proposals(volume, np.ones((3, 2, 2), bool), IDENTITY)
    expected = [(i, j, k) for i in range(3) for j in range(2) for k in range(2)]
    assert [tuple(v) for v in props.voxel_indices] == expected


def test_select_then_scatter_reproduces_masked_volume(rng):
    grid = GridSpec(dims=(3, 3, 2), origin=(0.0, 0.0, 1.0), resolution=1.0)
    volume = VoxelVolume(grid, rng.standard_normal((3, 3, 2, 4)))
    mask = rng.uniform(size=(3, 3, 2)) < 0.5
    props = select_proposals(volume, mask, IDENTITY)
    rebuilt = scatter_proposals(VoxelVolume.zeros(grid, 4), props)
    np.testing.assert_array_equal(rebuilt.data, volume.data * mask[..., None])


def test_proposals_outside_image_are_invalid():
    grid = GridSpec(dims=(2, 1, 1), origin=(-10.0, 0.0, 1.0), resolution=10.0)
    volume = VoxelVolume.zeros(grid, 2)
    props = select_proposals(volume, np.ones((2, 1, 1), bool), IDENTITY, image_shape=(4, 4))
    assert props.count == 2
    assert not props.valid[0], "voxel projecting to negative u must be flagged"
