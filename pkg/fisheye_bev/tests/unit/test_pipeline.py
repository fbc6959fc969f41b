"""
Unit tests for the frame pipeline.
"""

import numpy as np
import pytest

from fisheye_bev.services.lift import DepthBins
from fisheye_bev.services.metrics import NUM_CLASSES, STREET
from fisheye_bev.services.pipeline import (
    PipelineConfig,
    config_hash,
    lift_frame,
    one_hot,
    predict_classes,
    run_frame,
)
from fisheye_bev.services.pool import GridSpec, PoolStrategy
from fisheye_bev.services.scenesim import SceneParams, make_scene


pytestmark = pytest.mark.unit


@pytest.fixture
def cfg():
    return PipelineConfig(spec=GridSpec.centered(8.0, 0.25), bins=DepthBins(0.25, 16.0, 0.25), stride=(4, 4),
                          visibility_samples=2)


@pytest.fixture
def scene(cfg):
    return make_scene(cfg.spec, seed=0, params=SceneParams.preset('easy', cfg.spec))


class TestHelpers:
    """Test configuration hashing and class helpers."""

    def test_hash_ignores_key_order(self):
        assert config_hash({'a': 1, 'b': [1, 2]}) == config_hash({'b': [1, 2], 'a': 1})

    def test_hash_changes_with_values(self):
        assert config_hash({'tau': 4.0}) != config_hash({'tau': 4.5})

    def test_config_dict(self, cfg):
        payload = cfg.to_dict()
        assert payload['stride'] == [4, 4]
        assert payload['strategy'] == 'sum'
        assert payload['grid']['cell'] == 0.25

    def test_strategy_parsed(self):
        assert PipelineConfig(strategy='per_cell_sensor').strategy == PoolStrategy.PER_CELL_SENSOR

    def test_one_hot(self):
        features = one_hot(np.array([[0, 3]]))
        assert features.shape == (1, 2, NUM_CLASSES)
        assert features[0, 1, 3] == 1.0
        assert features.sum() == 2.0

    def test_ties_go_to_lower_class(self):
        pooled = np.zeros((NUM_CLASSES, 1, 2))
        pooled[2, 0, 0] = pooled[4, 0, 0] = 1.0
        assert predict_classes(pooled).tolist() == [[2, 0]]


class TestLiftFrame:
    """Test rendering, lifting and splatting a frame."""

    def test_points_land_on_grid(self, scene, small_rig, cfg):
        views, grid, _ = lift_frame(scene, small_rig, cfg, workers=1)

        assert len(views) == 4
        assert grid.per_camera.shape == (4, NUM_CLASSES, cfg.spec.nx, cfg.spec.ny)
        assert grid.counts.sum() > 0
        np.testing.assert_array_equal(grid.counts, grid.per_camera_counts.sum(axis=0))

    def test_worker_count_does_not_change_grid(self, scene, small_rig, cfg):
        _, one, _ = lift_frame(scene, small_rig, cfg, workers=1)
        _, three, _ = lift_frame(scene, small_rig, cfg, workers=3)
        assert one.features.tobytes() == three.features.tobytes()
        assert one.per_camera_counts.tobytes() == three.per_camera_counts.tobytes()

    def test_rectified_path(self, scene, small_rig, cfg):
        views, grid, _ = lift_frame(scene, small_rig, cfg, rectify=True, workers=1)
        assert views[0].rays.dirs.shape[:2] == (120 // 4, 160 // 4)
        for view in views:
            assert view.surface_image.shape == view.semantic_image.shape == view.depth_image.shape, (
                f"camera {view.camera}: surface {view.surface_image.shape} vs semantic {view.semantic_image.shape}"
            )
        assert grid.counts.sum() > 0


class TestRunFrame:
    """Test a whole evaluated frame."""

    def test_frame_report(self, scene, small_rig, cfg):
        result = run_frame(scene, small_rig, cfg, workers=1)

        assert result.pred_class.shape == (cfg.spec.nx, cfg.spec.ny)
        assert 0.0 <= result.report.miou <= 1.0
        assert set(result.report.scores()) == {'occlusion', 'vehicles', 'markings', 'street', 'background'}

    def test_seen_street_predicted_as_street(self, small_rig, cfg):
        empty = make_scene(cfg.spec, seed=0, params=SceneParams.preset('empty', cfg.spec))
        result = run_frame(empty, small_rig, cfg, workers=1)

        seen = (result.gt_visibility.visibility >= 0.5) & (result.grid.counts > 0) & (empty.semantic == STREET)
        assert seen.any()
        agreement = np.mean(result.pred_class[seen] == STREET)
        assert agreement > 0.75, f"street agreement {agreement:.2f}"
