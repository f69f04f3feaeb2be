import dataclasses

import numpy as np
import pytest

from oceanssc.errors import DivergenceError, OceanError
from oceanssc.harness.gradcheck import probe_pipeline
from oceanssc.pipeline import (SYMBOLS, ModelParams, backward, forward, init_params, load_params,
                               save_params, train_steps)


@pytest.fixture(scope='module')
def small_params(small_config):
    return init_params(small_config, seed=5, identity=False)


def test_forward_is_deterministic(small_scene, small_params, small_config):
    a = forward(small_scene, small_params, small_config, seed=3)
    b = forward(small_scene, small_params, small_config, seed=3)
    np.testing.assert_array_equal(a.logits, b.logits)
    assert a.report == b.report


def test_desk_logit_shape(desk_scene, desk_config):
    result = forward(desk_scene, init_params(desk_config), desk_config)
    assert result.logits.shape == (32, 32, 4, 4)
    assert result.predicted_labels.shape == (32, 32, 4)
    assert np.isfinite(result.report.total)


def test_identity_init_leaves_lifted_volume_unchanged(small_scene, small_config):
    """Zeroed output projections make the SGDA and ILD stack an identity on the volume."""
    result = forward(small_scene, init_params(small_config, identity=True), small_config)
    assert result.proposals.count > 0, "fixture should produce proposals"
    np.testing.assert_array_equal(result.refined, result.lifted)


def test_every_symbol_is_consumed(small_scene, small_params, small_config):
    result = forward(small_scene, small_params, small_config)
    produced = set(result.ledger.produced)
    assert produced <= set(SYMBOLS)
    assert result.ledger.unconsumed() == []
    if result.cache.ild is not None:
        assert produced == set(SYMBOLS)


def test_ild_outputs_are_exposed(small_scene, small_params, small_config):
    result = forward(small_scene, small_params, small_config)
    if result.cache.ild is None:
        pytest.skip("fixture has no visible instance")
    gx, gy, _ = small_config.grid.dims
    assert result.p_hat.shape == (gx, gy, small_config.channels)
    assert result.instance_weights.shape == result.decision.shape
    assert set(np.unique(result.decision)) <= {0.0, 1.0}


def test_zero_upstream_gives_zero_gradients(small_scene, small_params, small_config):
    grads = backward(forward(small_scene, small_params, small_config), upstream=0.0)
    assert list(grads) == list(small_params)
    for name, g in grads.items():
        assert g.shape == small_params[name].shape, name
        assert not g.any(), f"{name} should have a zero gradient"


def test_backward_needs_forward_intermediates():
    with pytest.raises(OceanError):
        backward(object())


def test_no_proposals_leaves_block_untrained(small_scene, small_params, small_config):
    empty = dataclasses.replace(small_scene, depth=np.zeros_like(small_scene.depth))
    result = forward(empty, small_params, small_config)
    assert result.proposals.count == 0
    assert result.report.l_d == 0.0
    grads = backward(result)
    for name, g in grads.items():
        if name.startswith("sgda"):
            assert not g.any(), f"{name} should not receive gradient"


def test_full_pipeline_gradient_matches_finite_differences(small_config):
    report = probe_pipeline(small_config, seed=0, samples=12)
    assert report.samples == 12
    assert report.passed, f"max relative error {report.max_error:.3e}"


def test_zero_learning_rate_keeps_loss(small_scene, small_params, small_config):
    run = train_steps(small_scene, small_params, small_config, steps=3, lr=0.0)
    assert len(run.totals) == 3
    assert run.totals[0] == run.totals[1] == run.totals[2]
    assert [row[0] for row in run.rows()] == [0, 1, 2]


def test_training_rejects_bad_arguments(small_scene, small_params, small_config):
    with pytest.raises(ValueError):
        train_steps(small_scene, small_params, small_config, steps=0)
    with pytest.raises(ValueError):
        train_steps(small_scene, small_params, small_config, steps=1, lr=-1.0)


def test_non_finite_update_is_reported_as_divergence(monkeypatch, small_scene, small_params, small_config):
    def nan_gradients(result):
        return {k: np.full_like(v, np.nan) for k, v in small_params.items()}

    monkeypatch.setattr("oceanssc.pipeline.train.backward", nan_gradients)
    with pytest.raises(DivergenceError) as info:
        train_steps(small_scene, small_params, small_config, steps=3, lr=0.1)
    assert info.value.step == 1


def test_forward_errors_after_first_step_propagate(monkeypatch, small_scene, small_params, small_config):
    """A shape or logic error mid-run surfaces as itself, not as divergence."""
    real_forward = forward
    calls = []

    def failing_forward(*args, **kwargs):
        calls.append(1)
        if len(calls) > 1:
            raise ValueError("operands could not be broadcast together")
        return real_forward(*args, **kwargs)

    monkeypatch.setattr("oceanssc.pipeline.train.forward", failing_forward)
    with pytest.raises(ValueError, match="broadcast") as info:
        train_steps(small_scene, small_params, small_config, steps=3, lr=0.1)
    assert not isinstance(info.value, DivergenceError)


def test_desk_scene_overfits(desk_scene, desk_config):
    run = train_steps(desk_scene, init_params(desk_config), desk_config, steps=50, lr=0.1)
    assert run.totals[-1] < 0.7 * run.totals[0], \
        f"loss went from {run.totals[0]:.4f} to {run.totals[-1]:.4f}"


def test_params_round_trip(tmp_path, small_params):
    path = tmp_path / "params.ocnp"
    save_params(small_params, path)
    loaded = load_params(path)
    assert isinstance(loaded, ModelParams)
    assert list(loaded) == list(small_params)
    for name in small_params:
        np.testing.assert_array_equal(loaded[name], small_params[name])
