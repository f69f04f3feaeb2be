import numpy as np

from oceanssc.geometry.lifting import occupancy_mask_from_depth
from oceanssc.harness.fixtures import GROUND_CLASS, generate_scene, load_fixture, save_fixture


def test_fixture_is_deterministic(small_config):
    a = generate_scene(small_config, seed=4)
    b = generate_scene(small_config, seed=4)
    np.testing.assert_array_equal(a.depth, b.depth)
    np.testing.assert_array_equal(a.labels, b.labels)
    np.testing.assert_array_equal(a.mask.ids, b.mask.ids)
    for s in a.scales:
        np.testing.assert_array_equal(a.features[s], b.features[s])
    np.testing.assert_array_equal(a.sam, b.sam)


def test_fixture_without_instances(small_config):
    fixture = generate_scene(small_config, seed=2, instances=0)
    assert fixture.mask.count == 0
    assert not fixture.mask.ids.any()
    assert set(np.unique(fixture.labels)) <= {0, GROUND_CLASS}


def test_fixture_shapes(small_config, small_scene):
    h, w = small_config.image_height, small_config.image_width
    assert small_scene.image_shape == (h, w)
    assert small_scene.scales == [4, 8, 16]
    for s in small_scene.scales:
        assert small_scene.features[s].shape == (h // s, w // s, small_config.feature_channels[s])
        assert small_scene.depth_prior[s].shape == (h // s, w // s, small_config.binning.num_bins)
    assert small_scene.labels.shape == tuple(small_config.grid.dims)


def test_depth_lands_in_labelled_voxels(small_scene):
    """Every voxel hit by the rendered depth carries a nonzero label."""
    occupied = occupancy_mask_from_depth(small_scene.depth, small_scene.camera, small_scene.grid)
    assert occupied.any()
    assert np.all(small_scene.labels[occupied] != 0)


def test_fixture_round_trip(tmp_path, small_scene):
    save_fixture(small_scene, tmp_path)
    loaded = load_fixture(tmp_path)
    assert loaded.seed == small_scene.seed
    assert loaded.scales == small_scene.scales
    assert loaded.mask.count == small_scene.mask.count
    np.testing.assert_array_equal(loaded.mask.ids, small_scene.mask.ids)
    np.testing.assert_array_equal(loaded.labels, small_scene.labels)
    np.testing.assert_allclose(loaded.depth, small_scene.depth, rtol=1e-6)
    np.testing.assert_allclose(loaded.features[8], small_scene.features[8], rtol=1e-6, atol=1e-6)
    assert loaded.camera == small_scene.camera
    assert loaded.grid == small_scene.grid
