import pytest

from oceanssc.harness.gradcheck import (GRADCHECK_TOLERANCE, REGISTRY, check_gradients, covered_ops,
                                        gradcheck)

DIFFERENTIABLE_OPS = [
    "linear", "silu", "softmax", "rms_norm",
    "lift_features", "scatter_proposals",
    "sga_cluster", "depth_similarity", "sga3d_cluster", "sga3d_residual",
    "bilinear_sample", "gsga", "window_attention",
    "pool_instance_features", "decode_instance_bev", "decision_logits", "gumbel_decision",
    "combine_bev", "reconstruction_loss", "refine_scene",
    "cross_entropy_loss", "scal_losses", "depth_loss", "predict_head",
]


@pytest.mark.parametrize("op", sorted(REGISTRY))
def test_vjp_matches_finite_differences(op):
    report = gradcheck(op, trials=10, seed=11)
    assert report.trials == 10
    assert report.errors, f"{op} checked no inputs"
    assert report.passed, f"{op}: {report.errors}"
    assert report.tolerance == GRADCHECK_TOLERANCE


def test_zero_trials_gives_empty_report():
    report = gradcheck("linear", trials=0)
    assert report.trials == 0
    assert report.errors == {}
    assert report.passed


def test_unknown_op():
    with pytest.raises(KeyError):
        gradcheck("conv3d")


def test_registry_covers_every_differentiable_op():
    missing = set(DIFFERENTIABLE_OPS) - set(covered_ops())
    assert not missing, f"no gradient check for {sorted(missing)}"


def test_check_gradients_returns_reports():
    reports = check_gradients(["silu", "softmax"], trials=3)
    assert sorted(reports) == ["silu", "softmax"]
