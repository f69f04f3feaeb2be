import json

import numpy as np
import pytest

from oceanssc.harness.cli import EXIT_INVALID, EXIT_OK, create_argument_parser, main
from oceanssc.utils.io import read_csv, read_json, read_volume, write_volume

SMALL = {
    "image_height": 32, "image_width": 32,
    "camera": {"fx": 16.0, "fy": 16.0, "cx": 16.0, "cy": 16.0, "height": 1.0},
    "grid": {"dims": [16, 16, 2], "origin": [0.0, -3.2, -0.4], "resolution": 0.4},
    "binning": {"d_min": 1.0, "d_max": 7.0, "num_bins": 6},
    "channels": 6, "feature_channels": {"4": 4, "8": 5, "16": 6}, "context_channels": 6,
    "sam_channels": 3, "head_channels": 4, "layers": 1, "sampling_points": 2,
    "instances": {"min": 2, "max": 3},
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


def test_parser_lists_subcommands():
    help_text = create_argument_parser().format_help()
    for command in ("generate", "forward", "train", "gradcheck", "eval", "oracle"):
        assert command in help_text


def test_generate_writes_fixture(tmp_path, config_file):
    out = tmp_path / "scene"
    assert main(["generate", "--config", config_file, "--seed", "3", "--out", str(out), "-q"]) == EXIT_OK
    assert (out / "scene.json").is_file()
    assert (out / "mask.pgm").is_file()
    assert read_volume(out / "labels.ocnv").shape == (16, 16, 2, 1)
    assert read_json(out / "scene.json")["seed"] == 3


def test_forward_is_reproducible(tmp_path, config_file):
    first, second = tmp_path / "a", tmp_path / "b"
    for out in (first, second):
        assert main(["forward", "--config", config_file, "--seed", "7", "--out", str(out), "-q"]) == EXIT_OK
    names = sorted(p.name for p in first.iterdir())
    assert "logits.ocnv" in names and "losses.json" in names and "ild.json" in names
    assert names == sorted(p.name for p in second.iterdir())
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_forward_from_saved_fixture(tmp_path, config_file):
    scene, out = tmp_path / "scene", tmp_path / "run"
    assert main(["generate", "--config", config_file, "--out", str(scene), "-q"]) == EXIT_OK
    assert main(["forward", "--config", config_file, "--fixture", str(scene), "--identity",
                 "--out", str(out), "-q"]) == EXIT_OK
    assert read_volume(out / "logits.ocnv").shape == (16, 16, 2, 4)


def test_train_writes_trajectory(tmp_path, config_file):
    out = tmp_path / "train"
    assert main(["train", "--config", config_file, "--steps", "2", "--out", str(out), "-q"]) == EXIT_OK
    trajectory = read_csv(out / "trajectory.csv")
    assert trajectory["step"] == ["0", "1"]
    assert (out / "params.ocnp").is_file()


def test_eval_of_labels_against_themselves(tmp_path, config_file):
    run = tmp_path / "run"
    assert main(["forward", "--config", config_file, "--out", str(run), "-q"]) == EXIT_OK
    labels = str(run / "labels.ocnv")
    assert main(["eval", "--pred", labels, "--labels", labels, "--out", str(run), "-q"]) == EXIT_OK
    metrics = read_json(run / "metrics.json")
    assert metrics["miou"] == 1.0
    assert metrics["iou"] == 1.0


def test_eval_of_logits(tmp_path, config_file):
    run = tmp_path / "run"
    assert main(["forward", "--config", config_file, "--out", str(run), "-q"]) == EXIT_OK
    assert main(["eval", "--pred", str(run / "logits.ocnv"), "--labels", str(run / "labels.ocnv"),
                 "--out", str(run), "-q"]) == EXIT_OK
    assert 0.0 <= read_json(run / "metrics.json")["iou"] <= 1.0


def test_oracle_single_op(tmp_path):
    assert main(["oracle", "--op", "sga3d", "--trials", "5", "--out", str(tmp_path), "-q"]) == EXIT_OK
    report = read_json(tmp_path / "oracle.json")
    assert report["sga3d"]["passed"] is True


def test_gradcheck_single_op(tmp_path):
    assert main(["gradcheck", "--op", "softmax", "--trials", "3", "--out", str(tmp_path), "-q"]) == EXIT_OK
    assert read_json(tmp_path / "gradcheck.json")["softmax"]["passed"] is True


def test_unknown_flag_exits_with_usage_error(tmp_path):
    assert main(["forward", "--bogus", "--out", str(tmp_path)]) == EXIT_INVALID


def test_unknown_oracle_op(tmp_path):
    assert main(["oracle", "--op", "nope", "--out", str(tmp_path), "-q"]) == EXIT_INVALID


def test_missing_config_file(tmp_path):
    assert main(["generate", "--config", str(tmp_path / "missing.json"), "-q"]) == EXIT_INVALID


def test_verbose_and_quiet_conflict(tmp_path):
    assert main(["generate", "-v", "-q", "--out", str(tmp_path)]) == EXIT_INVALID


def test_invalid_configuration_value(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"window": 5}))
    assert main(["generate", "--config", str(path), "--out", str(tmp_path), "-q"]) == EXIT_INVALID


def test_eval_rejects_labels_beyond_logit_channels(tmp_path):
    logits = write_volume(tmp_path / "logits.ocnv", np.zeros((2, 2, 1, 3)))
    labels = np.zeros((2, 2, 1, 1), dtype=np.int64)
    labels[0, 0, 0, 0] = 5
    gt = write_volume(tmp_path / "labels.ocnv", labels, integer=True)
    assert main(["eval", "--pred", str(logits), "--labels", str(gt), "--out", str(tmp_path), "-q"]) == EXIT_INVALID
