"""
Configuration settings for the fisheye BEV engine.

Loads settings from environment variables with sensible defaults.
Can be configured via .env file or system environment variables.
"""

import os
from pathlib import Path
from dotenv import load_dotenv
from fisheye_bev.utils.logger import setup_logger

# Setup logger
logger = setup_logger(__name__)

# Determine which .env file to load
# Priority: ENV_FILE env var > .env.dev > .env.prod > .env
env_file = os.getenv('ENV_FILE')
if env_file:
    env_path = Path(env_file)
else:
    # Try in order: .env.dev, .env.prod, .env
    base_dir = Path(__file__).resolve().parent.parent.parent
    for filename in ['.env.dev', '.env.prod', '.env']:
        env_path = base_dir / filename
        if env_path.exists():
            break
    else:
        env_path = None

# Load environment variables
if env_path and env_path.exists():
    load_dotenv(env_path)
    logger.debug(f"Loaded configuration from: {env_path.name}")
else:
    logger.debug("Using system environment variables (no .env file found)")


def _float(name: str, default: str) -> float:
    return float(os.getenv(name, default))


def _int(name: str, default: str) -> int:
    return int(os.getenv(name, default))


# Logging
LOG_LEVEL = os.getenv('FBEV_LOG_LEVEL', 'INFO').upper()

# BEV grid: 0.25 m cells, ±25 m around the ego vehicle (200 x 200)
GRID_CELL = _float('FBEV_GRID_CELL', '0.25')
GRID_RANGE = _float('FBEV_GRID_RANGE', '25.0')

# Depth bins (range along the ray, meters)
DEPTH_MIN = _float('FBEV_DEPTH_MIN', '0.5')
DEPTH_MAX = _float('FBEV_DEPTH_MAX', '25.0')
DEPTH_STEP = _float('FBEV_DEPTH_STEP', '0.5')

# Default rig image and feature map
IMAGE_WIDTH = _int('FBEV_IMAGE_WIDTH', '480')
IMAGE_HEIGHT = _int('FBEV_IMAGE_HEIGHT', '302')
FEATURE_STRIDE = _int('FBEV_FEATURE_STRIDE', '2')

# Occlusion map
TAU = _float('FBEV_TAU', '4.0')
KERNEL_RADIUS = _int('FBEV_KERNEL_RADIUS', '1')

# Losses
LOSS_LAMBDA = _float('FBEV_LOSS_LAMBDA', '1.0')
LOSS_EPS = _float('FBEV_LOSS_EPS', '1e-7')

# Camera model inversion
NEWTON_MAX_ITER = _int('FBEV_NEWTON_MAX_ITER', '50')
INVERSE_MARGIN = _float('FBEV_INVERSE_MARGIN', '1e-6')
INVERSE_POLY_TOLERANCE = _float('FBEV_INVERSE_POLY_TOLERANCE', '0.05')

# Synthetic scenes
VISIBILITY_SUBSAMPLES = _int('FBEV_VISIBILITY_SUBSAMPLES', '4')
VEHICLE_HEIGHT = _float('FBEV_VEHICLE_HEIGHT', '1.5')

# Training
LEARNING_RATE = _float('FBEV_LEARNING_RATE', '1e-4')
BATCH_SIZE = _int('FBEV_BATCH_SIZE', '4')

# Parallelism (results never depend on it)
WORKERS = _int('FBEV_WORKERS', '1')

logger.debug(
    f"GRID_CELL = {GRID_CELL} m, GRID_RANGE = {GRID_RANGE} m, "
    f"depth bins [{DEPTH_MIN}, {DEPTH_MAX}) step {DEPTH_STEP} m, TAU = {TAU}"
)
