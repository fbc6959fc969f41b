"""
Helpers shared by the command modules: common flags, rig loading and output
directories.
"""

import argparse
from pathlib import Path
from typing import Optional

from fisheye_bev.services.lift import DepthBins
from fisheye_bev.services.pool import GridSpec
from fisheye_bev.services.rig_parser import Rig, load_rig
from fisheye_bev.services.scenesim import default_rig
from fisheye_bev.utils import config
from fisheye_bev.utils.errors import ConfigError
from fisheye_bev.utils.logger import setup_logger

logger = setup_logger(__name__)


def add_common_arguments(parser: argparse.ArgumentParser, config_required: bool = False) -> None:
    parser.add_argument('--config', type=Path, required=config_required,
                        help='Rig file (YAML); the built-in four-camera rig when omitted')
    parser.add_argument('--out-dir', type=Path, default=Path('out'), help='Output directory (default: out)')
    parser.add_argument('--seed', type=int, default=0, help='Random seed (default: 0)')
    parser.add_argument('--workers', type=int, default=None,
                        help='Worker threads (default: FBEV_WORKERS); results do not depend on it')


def default_setup() -> Rig:
    """Built-in rig with the configured grid, depth bins and stride."""
    return Rig(
        cameras=default_rig(),
        spec=GridSpec.centered(),
        bins=DepthBins(config.DEPTH_MIN, config.DEPTH_MAX, config.DEPTH_STEP),
        stride=(config.FEATURE_STRIDE, config.FEATURE_STRIDE),
    )


def load_setup(path: Optional[Path]) -> Rig:
    if path is None:
        logger.info("No rig file given; using the built-in four-camera rig")
        return default_setup()
    return load_rig(path)


def workers_from(args: argparse.Namespace) -> int:
    workers = config.WORKERS if args.workers is None else args.workers
    if workers < 1:
        raise ConfigError(f"--workers must be >= 1, got {workers}")
    return workers


def prepare_out_dir(path: Path) -> Path:
    path = Path(path)
    if path.exists() and not path.is_dir():
        raise ConfigError(f"{path}: output path exists and is not a directory")
    path.mkdir(parents=True, exist_ok=True)
    return path
