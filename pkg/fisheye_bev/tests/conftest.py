"""
Pytest configuration and shared fixtures.

This file contains fixtures that are available to all tests.
Fixtures are reusable components that help set up test conditions.
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add the parent directory to the path so we can import fisheye_bev modules
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from fisheye_bev.index import main
from fisheye_bev.services.camera import (
    Camera,
    CameraExtrinsics,
    CameraIntrinsics,
    DistortionModel,
    ModelKind,
    look_rotation,
)
from fisheye_bev.services.lift import DepthBins
from fisheye_bev.services.pool import GridSpec
from fisheye_bev.services.scenesim import Vehicle, default_rig


# =============================================================================
# Path Fixtures - Provide paths to test data files
# =============================================================================

@pytest.fixture
def test_data_dir():
    """
    Returns the path to the test_data directory.
    This fixture helps locate the rig files used by command tests.
    """
    return Path(__file__).parent / "test_data"


@pytest.fixture
def surround_rig_file(test_data_dir):
    """
    Four 160x120 polynomial fisheyes on a +-10 m grid.
    Small enough that a whole demo frame runs in about a second.
    """
    return test_data_dir / "surround_rig.yaml"


@pytest.fixture
def pair_rig_file(test_data_dir):
    """
    Two 64x48 cameras (polynomial front, double-sphere rear) on a +-4 m grid.
    """
    return test_data_dir / "pair_rig.yaml"


@pytest.fixture
def invalid_rig_file(test_data_dir):
    """
    Rig with a non-monotonic polynomial, a duplicate camera name and a
    feature stride that does not divide the images.
    """
    return test_data_dir / "invalid_rig.yaml"


# =============================================================================
# Camera Fixtures - One valid parameter set per model family
# =============================================================================

MODEL_FIXTURES = {
    ModelKind.POLYNOMIAL: dict(f=300.0, coeffs=(300.0, -20.0, 8.0, -1.5)),
    ModelKind.UCM: dict(f=250.0, coeffs=(0.8,)),
    ModelKind.EUCM: dict(f=250.0, coeffs=(0.6, 1.1)),
    ModelKind.RECTILINEAR: dict(f=400.0, coeffs=()),
    ModelKind.STEREOGRAPHIC: dict(f=200.0, coeffs=()),
    ModelKind.DOUBLE_SPHERE: dict(f=250.0, coeffs=(0.1, 0.55)),
}


@pytest.fixture(params=list(MODEL_FIXTURES), ids=lambda kind: kind.value)
def model(request):
    """
    A valid DistortionModel of every family (parametrized).
    """
    return DistortionModel(request.param, **MODEL_FIXTURES[request.param])


@pytest.fixture
def poly_intrinsics():
    """
    1280x960 polynomial fisheye with a mildly non-linear r(theta).
    """
    model = DistortionModel(ModelKind.POLYNOMIAL, **MODEL_FIXTURES[ModelKind.POLYNOMIAL])
    return CameraIntrinsics(model, cx=640.0, cy=480.0, width=1280, height=960)


@pytest.fixture
def pinhole_intrinsics():
    """
    Rectilinear camera with f=100 and the principal point at (200, 150).
    """
    model = DistortionModel(ModelKind.RECTILINEAR, f=100.0)
    return CameraIntrinsics(model, cx=200.0, cy=150.0, width=400, height=300)


@pytest.fixture
def down_camera():
    """
    Rectilinear camera 2 m above the origin looking straight down.
    """
    model = DistortionModel(ModelKind.RECTILINEAR, f=20.0, theta_max=1.0)
    intr = CameraIntrinsics(model, cx=16.0, cy=16.0, width=32, height=32)
    extr = CameraExtrinsics(look_rotation(0.0, math.pi / 2), (0.0, 0.0, 2.0))
    return Camera('down', intr, extr)


@pytest.fixture
def small_rig():
    """
    Built-in surround rig at 160x120 with a linear fisheye polynomial.
    """
    return default_rig(width=160, height=120, coeffs=(60.0, 0.0, 0.0, 0.0))


# =============================================================================
# Grid Fixtures
# =============================================================================

@pytest.fixture
def small_spec():
    """
    +-4 m grid with 0.25 m cells (32 x 32).
    """
    return GridSpec.centered(4.0, 0.25)


@pytest.fixture
def small_bins():
    return DepthBins(0.5, 8.0, 0.5)


@pytest.fixture
def rng():
    """
    Seeded generator so random fixtures are identical on every run.
    """
    return np.random.default_rng(1234)


@pytest.fixture
def per_camera_stack(rng):
    """
    Random (K=2, C=3, 4, 4) per-camera grid with matching counts; camera 1
    misses the first row.
    """
    per_camera = rng.normal(size=(2, 3, 4, 4))
    counts = np.ones((2, 4, 4), dtype=np.int64)
    counts[1, 0, :] = 0
    per_camera[1, :, 0, :] = 0.0
    return per_camera, counts


# =============================================================================
# Acceptance Fixtures - Full-resolution surround scene
# =============================================================================

@pytest.fixture
def acceptance_rig():
    """
    Four 800x600 fisheyes (r = 190 * theta) mounted 2.2 m high.
    """
    return default_rig(width=800, height=600, mount_height=2.2, pitch=0.35, coeffs=(190.0, 0.0, 0.0, 0.0))


@pytest.fixture
def acceptance_vehicles():
    """
    Two parked vehicles on the road, both inside the rig's view. Faces that
    point at the ego vehicle lie inside footprint cells, not on cell edges.
    """
    return (
        Vehicle(center=(4.6, 1.75), length=4.0, width=1.8, yaw=0.0),
        Vehicle(center=(-4.6, -1.75), length=4.0, width=1.8, yaw=0.0),
    )


# =============================================================================
# Command Fixtures - Run the command-line entry point in-process
# =============================================================================

@pytest.fixture
def run_cli(capsys):
    """
    Runs fisheye_bev.index.main and returns (exit code, stdout).

    Usage in tests:
        code, out = run_cli('eval', '--scores', 0.8, 0.7, 0.6, 0.9, 1.0)
        assert code == 0
    """
    def run(*argv):
        code = main([str(arg) for arg in argv])
        return code, capsys.readouterr().out

    return run
