import numpy as np
import pytest

from oceanssc.errors import FormatError, ShapeError
from oceanssc.utils.io import (load_tensors, read_pgm, read_volume, save_tensors, to_gray, write_pgm,
                               write_volume)


def test_volume_layouts(tmp_path, rng):
    write_volume(tmp_path / "map.ocnv", rng.standard_normal((3, 4, 2)))
    write_volume(tmp_path / "plane.ocnv", rng.standard_normal((3, 4)))
    write_volume(tmp_path / "ids.ocnv", np.arange(24).reshape(2, 3, 4, 1), integer=True)
    assert read_volume(tmp_path / "map.ocnv").shape == (3, 4, 1, 2)
    assert read_volume(tmp_path / "plane.ocnv").shape == (3, 4, 1, 1)
    ids = read_volume(tmp_path / "ids.ocnv")
    assert ids.dtype == np.int64
    np.testing.assert_array_equal(ids[..., 0], np.arange(24).reshape(2, 3, 4))


def test_volume_rejects_rank_five(tmp_path):
    with pytest.raises(ShapeError):
        write_volume(tmp_path / "v.ocnv", np.zeros((1, 1, 1, 1, 1)))


def test_volume_bad_magic(tmp_path):
    path = write_volume(tmp_path / "v.ocnv", np.zeros((2, 2)))
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        read_volume(path)


def test_volume_truncated_payload(tmp_path):
    path = write_volume(tmp_path / "v.ocnv", np.zeros((2, 2)))
    path.write_bytes(path.read_bytes()[:-2])
    with pytest.raises(FormatError):
        read_volume(path)


def test_tensor_container_checksum(tmp_path, rng):
    path = save_tensors(tmp_path / "p.ocnp", {"a": rng.standard_normal((2, 3)), "b": np.zeros(4)})
    loaded = load_tensors(path)
    assert list(loaded) == ["a", "b"]
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_tensors(path)


def test_pgm_round_trip_and_wide_values(tmp_path):
    img = np.array([[0, 1, 2], [3, 4, 5]])
    image, maxval = read_pgm(write_pgm(tmp_path / "a.pgm", img))
    np.testing.assert_array_equal(image, img)
    assert maxval == 5
    image, maxval = read_pgm(write_pgm(tmp_path / "b.pgm", img * 1000))
    np.testing.assert_array_equal(image, img * 1000)
    assert maxval == 5000


def test_pgm_rejects_other_formats(tmp_path):
    path = tmp_path / "a.pgm"
    path.write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(FormatError):
        read_pgm(path)


def test_pgm_rejects_negative_pixels(tmp_path):
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "a.pgm", np.array([[-1, 0]]))


def test_to_gray():
    np.testing.assert_array_equal(to_gray(np.array([[0.0, 0.5, 1.0]])), [[0, 128, 255]])
    assert not to_gray(np.full((2, 2), 3.0)).any()
