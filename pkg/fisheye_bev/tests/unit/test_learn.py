"""
Unit tests for the learning service.
Tests gradients, optimizers, the training loop, checkpoints and the
noisy-overlap learnability fixture.
"""

import json

import numpy as np
import pytest

from fisheye_bev.services.learn import (
    MANIFEST,
    Adam,
    GradientDescent,
    TrainConfig,
    TrainSample,
    ablation_frame,
    batch_indices,
    check_model_gradients,
    grad_check,
    init_model,
    load_checkpoint,
    loss_curve_text,
    make_noisy_overlap_fixture,
    minimize,
    noisy_overlap_config,
    overlap_cells,
    relative_error,
    run_ablation,
    save_checkpoint,
    train,
)
from fisheye_bev.utils.errors import ConfigError, DataError, NumericError, ShapeError, TrainingError


pytestmark = pytest.mark.unit


@pytest.fixture
def samples():
    return make_noisy_overlap_fixture(seed=3, num_samples=2)


def quadratic(params):
    def objective(step):
        x = params['x']
        return float(np.sum(x * x)), {'x': 2.0 * x}
    return objective


def model_bytes(model):
    return {name: np.asarray(value, dtype=np.float64).tobytes() for name, value in model.arrays().items()}


class TestTrainSample:
    """Test sample validation."""

    def test_count_shape_mismatch_rejected(self, samples):
        s = samples[0]
        with pytest.raises(ShapeError):
            TrainSample(s.per_camera, s.counts[:1], s.gt_class, s.visibility, s.gt_occ,
                        s.occ_visibility, s.intrinsic_vectors)

    def test_nan_features_rejected(self, samples):
        s = samples[0]
        features = s.per_camera.copy()
        features[0, 0, 0, 0] = np.nan
        with pytest.raises(DataError):
            TrainSample(features, s.counts, s.gt_class, s.visibility, s.gt_occ,
                        s.occ_visibility, s.intrinsic_vectors)


class TestTrainConfig:
    """Test training settings."""

    @pytest.mark.parametrize("overrides", [
        {'optimizer': 'sgd'},
        {'lr': -0.1},
        {'batch_size': 0},
        {'workers': 0},
        {'class_weights': '1-2'},
    ])
    def test_invalid_settings_rejected(self, overrides):
        with pytest.raises(ConfigError):
            TrainConfig(**overrides)

    def test_dict_round_trip(self):
        cfg = TrainConfig(strategy='intrinsic_embed', lr=0.01, batch_size=2, workers=1)
        assert TrainConfig.from_dict(cfg.to_dict(), workers=1) == cfg

    def test_worker_count_not_part_of_identity(self):
        assert 'workers' not in TrainConfig(workers=1).to_dict()


class TestGradients:
    """Test analytic model gradients against central differences."""

    @pytest.mark.parametrize("strategy", ["weighted_sum", "per_cell_sensor", "intrinsic_embed"])
    def test_model_gradients(self, samples, strategy):
        cfg = noisy_overlap_config(strategy=strategy, head_trainable=True, head_scale=1.0)
        model = init_model(samples, strategy, head_scale=1.0)

        result = check_model_gradients(model, samples, cfg, h=1e-5)

        assert result.checked > 0
        assert result.max_error < 1e-6, f"{strategy}: error {result.max_error:.3g} at {result.parameter}"

    def test_gradients_without_occlusion_unit(self, samples):
        cfg = noisy_overlap_config(occlusion=False, head_trainable=True)
        model = init_model(samples, cfg.strategy, head_scale=4.0)
        assert 'occ.w' not in model.parameters(cfg.head_trainable, cfg.occlusion)
        assert check_model_gradients(model, samples, cfg).max_error < 1e-6

    def test_wrong_gradient_detected(self):
        params = {'x': np.array([1.0, -2.0])}
        result = grad_check(lambda: float(np.sum(params['x'] ** 2)), params, {'x': np.zeros(2)})
        assert result.max_error == pytest.approx(1.0)
        assert result.parameter.startswith('x[')

    def test_grad_check_restores_parameters(self):
        params = {'x': np.array([0.3, 0.7])}
        grad_check(lambda: float(np.sum(params['x'] ** 3)), params, {'x': 3 * params['x'] ** 2})
        np.testing.assert_array_equal(params['x'], [0.3, 0.7])

    def test_grad_check_subsamples(self):
        params = {'x': np.linspace(-1.0, 1.0, 50)}
        result = grad_check(lambda: float(np.sum(params['x'] ** 2)), params, {'x': 2 * params['x']}, max_params=10)
        assert result.checked == 10

    def test_step_size_range(self):
        params = {'x': np.ones(2)}
        with pytest.raises(ConfigError):
            grad_check(lambda: 0.0, params, {'x': np.zeros(2)}, h=1e-2)

    def test_gradient_shape_mismatch(self):
        params = {'x': np.ones(2)}
        with pytest.raises(ShapeError):
            grad_check(lambda: 0.0, params, {'x': np.zeros(3)})

    def test_relative_error_floor(self):
        assert relative_error(1e-12, -1e-12) == 0.0
        assert relative_error(2.0, 1.0) == 0.5


class TestOptimizers:
    """Test the update rules on a quadratic bowl."""

    def test_gradient_descent_converges(self):
        params = {'x': np.array([3.0, -2.0])}
        history = minimize(quadratic(params), params, GradientDescent(0.1), steps=100)
        assert len(history) == 100
        assert history[0] == pytest.approx(13.0)
        np.testing.assert_allclose(params['x'], 0.0, atol=1e-8)

    def test_adam_decreases_loss(self):
        params = {'x': np.array([3.0, -2.0])}
        history = minimize(quadratic(params), params, Adam(0.1), steps=200)
        assert history[-1] < 0.01 * history[0]

    def test_adam_first_step_moves_by_lr(self):
        """Test that the bias-corrected first step is lr * sign(g)."""
        params = {'x': np.array([3.0, -2.0])}
        Adam(0.5).step(params, {'x': np.array([6.0, -4.0])})
        np.testing.assert_allclose(params['x'], [2.5, -1.5], atol=1e-7)

    def test_adam_state_round_trip(self):
        params = {'x': np.array([1.0, 2.0])}
        first = Adam(0.1)
        minimize(quadratic(params), params, first, steps=3)
        second = Adam(0.1)
        second.load_state_dict(first.state_dict())
        assert second.t == 3
        np.testing.assert_array_equal(second.m['x'], first.m['x'])
        np.testing.assert_array_equal(second.v['x'], first.v['x'])

    def test_divergence_reports_step(self):
        params = {'x': np.array([1.0])}

        def objective(step):
            return (np.nan if step == 3 else 1.0), {'x': np.zeros(1)}

        with pytest.raises(TrainingError) as exc_info:
            minimize(objective, params, GradientDescent(0.1), steps=10)
        assert exc_info.value.step == 3

    def test_numeric_failure_in_objective_reports_step(self):
        params = {'x': np.array([1.0])}

        def objective(step):
            if step == 2:
                raise NumericError("Class logits are not finite")
            return 1.0, {'x': np.zeros(1)}

        with pytest.raises(TrainingError) as exc_info:
            minimize(objective, params, GradientDescent(0.1), steps=5)
        assert exc_info.value.step == 2

    def test_parameter_blow_up_detected(self):
        params = {'x': np.array([1.0])}
        with pytest.raises(TrainingError):
            minimize(lambda step: (1.0, {'x': np.array([np.inf])}), params, GradientDescent(1.0), steps=2)


class TestBatchIndices:
    """Test seeded batch selection."""

    def test_deterministic_per_step(self):
        np.testing.assert_array_equal(batch_indices(10, 3, seed=5, step=4), batch_indices(10, 3, seed=5, step=4))

    def test_sorted_and_unique(self):
        picks = batch_indices(10, 4, seed=1, step=0)
        assert picks.tolist() == sorted(set(picks.tolist()))
        assert len(picks) == 4

    def test_full_batch(self):
        assert batch_indices(3, 8, seed=0, step=9).tolist() == [0, 1, 2]


class TestTraining:
    """Test the training loop."""

    def test_zero_learning_rate_keeps_parameters(self, samples):
        cfg = noisy_overlap_config(lr=0.0, head_trainable=True)
        initial = init_model(samples, cfg.strategy, cfg.head_scale)

        state = train(samples, cfg, steps=5)

        assert len(set(state.loss_history)) == 1
        assert model_bytes(state.model) == model_bytes(initial)

    def test_reproducible(self, samples):
        cfg = noisy_overlap_config(optimizer='adam', lr=0.05, batch_size=1, head_trainable=True)
        a = train(samples, cfg, steps=6)
        b = train(samples, cfg, steps=6)
        assert a.loss_history == b.loss_history
        assert model_bytes(a.model) == model_bytes(b.model)

    def test_worker_count_does_not_change_results(self, samples):
        one = train(samples, noisy_overlap_config(workers=1), steps=4)
        three = train(samples, noisy_overlap_config(workers=3), steps=4)
        assert one.loss_history == three.loss_history
        assert model_bytes(one.model) == model_bytes(three.model)

    def test_continuation_equals_single_run(self, samples):
        cfg = noisy_overlap_config(optimizer='adam', lr=0.05, batch_size=1, head_trainable=True)
        full = train(samples, cfg, steps=8)
        split = train(samples, cfg, steps=5)
        split = train(samples, cfg, steps=3, state=split)
        assert split.step == 8
        assert split.loss_history == full.loss_history
        assert model_bytes(split.model) == model_bytes(full.model)

    def test_invalid_step_count(self, samples):
        with pytest.raises(ConfigError):
            train(samples, noisy_overlap_config(), steps=0)

    def test_no_samples(self):
        with pytest.raises(ConfigError):
            train([], noisy_overlap_config(), steps=1)

    def test_loss_curve_text(self):
        lines = loss_curve_text([0.5, 0.25]).splitlines()
        assert lines[0] == "step\tloss"
        assert lines[1:] == ["0\t0.5", "1\t0.25"]


class TestCheckpoints:
    """Test checkpoint persistence and resume."""

    @pytest.fixture
    def cfg(self):
        return noisy_overlap_config(optimizer='adam', lr=0.05, batch_size=1, head_trainable=True)

    def test_resume_matches_uninterrupted_run(self, samples, cfg, tmp_path):
        full = train(samples, cfg, steps=10)

        half = train(samples, cfg, steps=5)
        save_checkpoint(half, cfg, tmp_path / "ckpt")
        state, loaded_cfg = load_checkpoint(tmp_path / "ckpt")
        resumed = train(samples, loaded_cfg, steps=5, state=state)

        assert loaded_cfg.to_dict() == cfg.to_dict()
        assert resumed.loss_history == full.loss_history
        assert model_bytes(resumed.model) == model_bytes(full.model)

    def test_manifest_contents(self, samples, cfg, tmp_path):
        save_checkpoint(train(samples, cfg, steps=2), cfg, tmp_path)
        manifest = json.loads((tmp_path / MANIFEST).read_text())
        assert manifest['step'] == 2
        assert manifest['strategy'] == 'per_cell_sensor'
        assert manifest['optimizer'] == 'adam'
        assert (tmp_path / "model.pool.w_cell.fbvt").exists()

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError) as exc_info:
            load_checkpoint(tmp_path)
        assert MANIFEST in str(exc_info.value)

    def test_tampered_config_rejected(self, samples, cfg, tmp_path):
        save_checkpoint(train(samples, cfg, steps=2), cfg, tmp_path)
        manifest = json.loads((tmp_path / MANIFEST).read_text())
        manifest['config']['lr'] = 1.0
        (tmp_path / MANIFEST).write_text(json.dumps(manifest))

        with pytest.raises(DataError) as exc_info:
            load_checkpoint(tmp_path)
        assert "config_hash" in str(exc_info.value)

    def test_missing_tensor_file(self, samples, cfg, tmp_path):
        save_checkpoint(train(samples, cfg, steps=2), cfg, tmp_path)
        (tmp_path / "model.head.W.fbvt").unlink()
        with pytest.raises(DataError):
            load_checkpoint(tmp_path)


class TestNoisyOverlapFixture:
    """Test the two-camera fixture with one clean and one noisy camera."""

    def test_layout(self):
        sample = make_noisy_overlap_fixture(seed=0, num_samples=1)[0]
        assert sample.per_camera.shape == (2, 5, 8, 8)
        assert not sample.per_camera[1, :, :, :2].any()
        assert np.all(sample.visibility[6:] == 0.0)
        assert np.all(sample.gt_occ[6:] == 1.0)
        assert np.count_nonzero(overlap_cells()) == 36

    def test_noise_level_range(self):
        with pytest.raises(ConfigError):
            make_noisy_overlap_fixture(seed=0, nu=1.5)

    @pytest.mark.slow
    def test_learns_to_trust_clean_camera(self):
        samples = make_noisy_overlap_fixture(seed=0)
        state = train(samples, noisy_overlap_config(), steps=200)

        history = state.loss_history
        assert history[-1] < 0.5 * history[0], f"loss {history[0]:.4f} -> {history[-1]:.4f}"

        w_cell = state.model.pool.w_cell
        overlap = overlap_cells()
        prefers_clean = (w_cell[0] > w_cell[1])[overlap]
        assert prefers_clean.mean() >= 0.9, f"clean camera preferred in {prefers_clean.mean():.0%} of cells"

    def test_ablation_smoke(self, samples):
        variants = {'weights-1-1-1-1': {}, 'no-occlusion-loss': {'occlusion': False}}
        reports = run_ablation(samples, noisy_overlap_config(), variants, steps=3)

        frame = ablation_frame(reports)

        assert list(frame.index) == ['weights-1-1-1-1', 'no-occlusion-loss']
        assert 'miou' in frame.columns
        assert frame.notna().all().all()
