"""
Integration Tests for the Commands

Runs every command through the entry point and compares the files it writes
with the in-memory service path.
"""

import numpy as np
import pytest

from fisheye_bev.services.lift import LiftedPoints, build_ray_grid, lift_points_indexed
from fisheye_bev.services.pool import PoolStrategy, init_pool_params, pool, splat
from fisheye_bev.services.rig_parser import load_rig
from fisheye_bev.services.tensor_io import encode_tensor, read_tensor, write_tensor


pytestmark = pytest.mark.integration


def file_bytes(directory):
    """{name: content} of every file in a directory."""
    return {path.name: path.read_bytes() for path in sorted(directory.iterdir()) if path.is_file()}


@pytest.fixture
def pair_images(tmp_path, rng):
    """Class images and a 3 m depth map for both cameras of the pair rig (stride 2)."""
    images = tmp_path / "images"
    for name in ('front', 'rear'):
        write_tensor(images / f"{name}.classes.fbvt", rng.integers(1, 5, size=(24, 32)).astype(np.uint8))
        write_tensor(images / f"{name}.depth.fbvt", np.full((24, 32), 3.0))
    return images


@pytest.fixture
def grids(tmp_path, per_camera_stack):
    per_camera, counts = per_camera_stack
    write_tensor(tmp_path / "grids.fbvt", per_camera)
    write_tensor(tmp_path / "counts.fbvt", counts)
    return tmp_path / "grids.fbvt", tmp_path / "counts.fbvt"


class TestProjectCommand:
    """Test the project command."""

    def test_outputs_written(self, run_cli, pair_rig_file, pair_images, tmp_path):
        out = tmp_path / "out"
        code, _ = run_cli('project', '--config', pair_rig_file, '--images', pair_images, '--out-dir', out)

        assert code == 0
        names = set(file_bytes(out))
        assert {'front.rays.fbvt', 'rear.valid.fbvt', 'points.positions.fbvt', 'per_camera.fbvt',
                'counts.fbvt'} <= names
        assert read_tensor(out / "per_camera.fbvt").shape == (2, 5, 32, 32)

    def test_matches_in_memory_lift(self, run_cli, pair_rig_file, pair_images, tmp_path):
        out = tmp_path / "out"
        run_cli('project', '--config', pair_rig_file, '--images', pair_images, '--out-dir', out)

        rig = load_rig(pair_rig_file)
        parts = []
        for number, camera in enumerate(rig.cameras):
            classes = read_tensor(pair_images / f"{camera.name}.classes.fbvt")
            index, clamped = rig.bins.index_of(read_tensor(pair_images / f"{camera.name}.depth.fbvt"))
            rays = build_ray_grid(camera.intrinsics, classes.shape)
            parts.append(lift_points_indexed(rays, camera.extrinsics, rig.bins, np.eye(5)[classes.astype(int)],
                                             index, ~clamped, number))
        grid = splat(LiftedPoints.concatenate(parts), rig.spec, 'sum', num_cameras=2)

        assert (out / "per_camera.fbvt").read_bytes() == encode_tensor(grid.per_camera)
        np.testing.assert_array_equal(read_tensor(out / "counts.fbvt"), grid.per_camera_counts)

    def test_uniform_depth_without_depth_maps(self, run_cli, pair_rig_file, pair_images, tmp_path):
        for path in pair_images.glob("*.depth.fbvt"):
            path.unlink()
        out = tmp_path / "out"

        code, _ = run_cli('project', '--config', pair_rig_file, '--images', pair_images, '--out-dir', out)

        assert code == 0
        weights = read_tensor(out / "points.depth_weight.fbvt")
        np.testing.assert_allclose(weights, 1.0 / 15)


class TestPoolCommand:
    """Test the pool command."""

    @pytest.mark.parametrize("strategy", ["sum", "max", "mean", "weighted_sum", "per_cell_sensor"])
    def test_matches_in_memory_pool(self, run_cli, grids, per_camera_stack, tmp_path, strategy):
        grid_path, count_path = grids
        out = tmp_path / "out"

        code, _ = run_cli('pool', '--grids', grid_path, '--counts', count_path, '--strategy', strategy,
                          '--out-dir', out)

        per_camera, counts = per_camera_stack
        params = init_pool_params(PoolStrategy.parse(strategy), counts, 3, None, per_camera)
        assert code == 0
        assert (out / "pooled.fbvt").read_bytes() == encode_tensor(pool(per_camera, params, counts))

    def test_repeated_runs_byte_identical(self, run_cli, grids, tmp_path):
        grid_path, count_path = grids
        run_cli('pool', '--grids', grid_path, '--counts', count_path, '--strategy', 'mean', '--out-dir', tmp_path / "a")
        run_cli('pool', '--grids', grid_path, '--counts', count_path, '--strategy', 'mean', '--out-dir', tmp_path / "b")
        assert (tmp_path / "a" / "pooled.fbvt").read_bytes() == (tmp_path / "b" / "pooled.fbvt").read_bytes()

    def test_single_camera_sum_is_identity(self, run_cli, rng, tmp_path):
        grid = rng.normal(size=(1, 4, 6, 6))
        write_tensor(tmp_path / "one.fbvt", grid)

        code, _ = run_cli('pool', '--grids', tmp_path / "one.fbvt", '--strategy', 'sum', '--out-dir', tmp_path / "out")

        assert code == 0
        np.testing.assert_array_equal(read_tensor(tmp_path / "out" / "pooled.fbvt"), grid[0])

    def test_intrinsic_embed_with_rig(self, run_cli, pair_rig_file, grids, tmp_path):
        grid_path, count_path = grids
        code, _ = run_cli('pool', '--grids', grid_path, '--counts', count_path, '--strategy', 'intrinsic_embed',
                          '--config', pair_rig_file, '--out-dir', tmp_path / "out", '--render')
        assert code == 0
        assert (tmp_path / "out" / "pooled.pgm").exists()


class TestEvalCommand:
    """Test the eval command."""

    def test_scores_give_mean_iou(self, run_cli):
        code, out = run_cli('eval', '--scores', 0.815, 0.776, 0.517, 0.895, 0.978)
        assert code == 0
        assert "0.796" in out

    def test_grids_and_report_file(self, run_cli, tmp_path):
        classes = np.array([[1, 2], [3, 4]], dtype=np.uint8)
        occ = np.array([[0.0, 1.0], [0.0, 0.0]])
        for name, array in (('pc', classes), ('po', occ), ('gc', classes), ('go', occ)):
            write_tensor(tmp_path / f"{name}.fbvt", array)

        code, out = run_cli('eval', '--pred-class', tmp_path / "pc.fbvt", '--pred-occ', tmp_path / "po.fbvt",
                            '--gt-class', tmp_path / "gc.fbvt", '--gt-occ', tmp_path / "go.fbvt",
                            '--out-dir', tmp_path / "out")

        assert code == 0
        assert "1.000" in out
        report = (tmp_path / "out" / "report.txt").read_text()
        assert "miou=" in report


class TestDemoCommand:
    """Test the demo pipeline."""

    def test_outputs(self, run_cli, surround_rig_file, tmp_path):
        out = tmp_path / "out"
        code, stdout = run_cli('demo', '--config', surround_rig_file, '--seed', 3, '--out-dir', out)

        assert code == 0
        assert "miou" in stdout
        names = set(file_bytes(out))
        assert {'pooled.fbvt', 'pred_class.fbvt', 'occlusion.fbvt', 'gt_class.fbvt', 'gt_occ.fbvt',
                'semantic.ppm', 'gt_semantic.ppm', 'occlusion.pgm', 'view.front.ppm', 'report.txt',
                'rig.yaml'} <= names

    def test_deterministic_across_runs_and_workers(self, run_cli, surround_rig_file, tmp_path):
        outputs = []
        for run, workers in enumerate((1, 1, 3)):
            out = tmp_path / f"run{run}"
            code, _ = run_cli('demo', '--config', surround_rig_file, '--seed', 5, '--workers', workers,
                              '--out-dir', out)
            assert code == 0
            outputs.append(file_bytes(out))

        assert outputs[0] == outputs[1]
        assert outputs[0] == outputs[2]

    def test_written_rig_reloads(self, run_cli, surround_rig_file, tmp_path):
        run_cli('demo', '--config', surround_rig_file, '--out-dir', tmp_path / "out")
        rig = load_rig(tmp_path / "out" / "rig.yaml")
        assert rig.cameras.names == ('front', 'left', 'rear', 'right')

    def test_rectified_path(self, run_cli, surround_rig_file, tmp_path):
        code, _ = run_cli('demo', '--config', surround_rig_file, '--rectify', '--hfov', 3.0,
                          '--out-dir', tmp_path / "out")
        assert code == 0
        assert (tmp_path / "out" / "pred_class.fbvt").exists()


class TestTrainCommand:
    """Test training, checkpoints and resume."""

    def test_zero_learning_rate_flat_curve(self, run_cli, tmp_path):
        code, _ = run_cli('train', '--steps', 5, '--lr', 0, '--out-dir', tmp_path)

        assert code == 0
        lines = (tmp_path / "loss_curve.txt").read_text().splitlines()
        assert lines[0] == "step\tloss"
        assert len({line.split("\t")[1] for line in lines[1:]}) == 1

    def test_resume_matches_uninterrupted_run(self, run_cli, tmp_path):
        flags = ('--optimizer', 'adam', '--lr', 0.05, '--train-head')
        assert run_cli('train', '--steps', 6, *flags, '--out-dir', tmp_path / "full")[0] == 0
        assert run_cli('train', '--steps', 3, *flags, '--out-dir', tmp_path / "half")[0] == 0

        code, _ = run_cli('train', '--steps', 3, '--resume', tmp_path / "half", '--out-dir', tmp_path / "resumed")

        assert code == 0
        assert file_bytes(tmp_path / "resumed") == file_bytes(tmp_path / "full")

    def test_ablation_table(self, run_cli, tmp_path):
        code, out = run_cli('train', '--ablation', '--steps', 2, '--out-dir', tmp_path)
        assert code == 0
        assert "pool-intrinsic-embed" in out
        assert (tmp_path / "ablation.txt").exists()

    @pytest.mark.slow
    def test_scene_samples(self, run_cli, surround_rig_file, tmp_path):
        code, _ = run_cli('train', '--source', 'scenes', '--config', surround_rig_file, '--samples', 2,
                          '--steps', 3, '--lr', 0.01, '--out-dir', tmp_path)
        assert code == 0
        assert (tmp_path / "manifest.json").exists()
