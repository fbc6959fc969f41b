"""
`pool` command: per-camera BEV grids -> pooled grid with the chosen strategy.
"""

import argparse
from pathlib import Path
from typing import Optional

import numpy as np

from fisheye_bev.commands.common import prepare_out_dir
from fisheye_bev.services.image_export import write_grid_pgm
from fisheye_bev.services.pipeline import intrinsic_vectors
from fisheye_bev.services.pool import PoolParams, PoolStrategy, init_pool_params, pool
from fisheye_bev.services.rig_parser import load_rig
from fisheye_bev.services.tensor_io import read_tensor, write_tensor
from fisheye_bev.utils.errors import ShapeError
from fisheye_bev.utils.logger import setup_logger

logger = setup_logger(__name__)

PARAM_FIELDS = ('W', 'w_cell', 'E', 'mu', 'intrinsic_map', 'intrinsic_vectors')


def register(subparsers) -> None:
    parser = subparsers.add_parser('pool', help='Merge per-camera BEV grids')
    parser.add_argument('--grids', type=Path, required=True, help='Per-camera grid tensor (K, C, nx, ny)')
    parser.add_argument('--counts', type=Path, default=None,
                        help='Per-camera count tensor (K, nx, ny); coverage is nonzero features when omitted')
    parser.add_argument('--strategy', default='sum',
                        help='sum, max, mean, weighted_sum, per_cell_sensor or intrinsic_embed')
    parser.add_argument('--params', type=Path, default=None,
                        help='Directory of parameter tensors (<field>.fbvt); initialized from the grids when omitted')
    parser.add_argument('--config', type=Path, default=None,
                        help='Rig file supplying intrinsic vectors for intrinsic_embed')
    parser.add_argument('--out-dir', type=Path, default=Path('out'), help='Output directory (default: out)')
    parser.add_argument('--render', action='store_true', help='Also write pooled.pgm')
    parser.set_defaults(handler=run)


def load_params(strategy: PoolStrategy, per_camera: np.ndarray, counts: np.ndarray,
                params_dir: Optional[Path], rig_path: Optional[Path]) -> PoolParams:
    """Initialize parameters, then replace every field found in params_dir."""
    vectors = intrinsic_vectors(load_rig(rig_path).cameras) if rig_path is not None else None
    params = init_pool_params(strategy, counts, per_camera.shape[1], vectors, per_camera)
    if params_dir is None:
        return params
    for name in PARAM_FIELDS:
        path = params_dir / f"{name}.fbvt"
        if path.exists():
            setattr(params, name, read_tensor(path).astype(np.float64))
            logger.debug(f"Loaded pooling parameter {name} from {path}")
    return params


def run(args: argparse.Namespace) -> int:
    # Step 1: Parse inputs
    strategy = PoolStrategy.parse(args.strategy)
    per_camera = read_tensor(args.grids).astype(np.float64)
    if per_camera.ndim != 4:
        raise ShapeError(f"{args.grids}: per-camera grids must be (K, C, nx, ny), got {per_camera.shape}")
    if args.counts is not None:
        counts = read_tensor(args.counts)
    else:
        counts = np.any(per_camera != 0, axis=1).astype(np.int64)
    if counts.shape != (per_camera.shape[0],) + per_camera.shape[2:]:
        raise ShapeError(f"Counts {counts.shape} do not match grids {per_camera.shape}")

    # Step 2: Parameters (shape-checked inside pool)
    params = load_params(strategy, per_camera, counts, args.params, args.config)

    # Step 3: Pool and save
    pooled = pool(per_camera, params, counts)
    out_dir = prepare_out_dir(args.out_dir)
    write_tensor(out_dir / 'pooled.fbvt', pooled)
    if args.render:
        write_grid_pgm(out_dir / 'pooled.pgm', pooled.max(axis=0))

    logger.info(f"Pooled {per_camera.shape[0]} camera grid(s) with {strategy.value} into {out_dir / 'pooled.fbvt'}")
    return 0
