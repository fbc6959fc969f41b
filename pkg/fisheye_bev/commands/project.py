"""
`project` command: rig + per-camera image tensors -> ray grids, lifted points
and per-camera BEV grids.

Inputs (in --images), per camera name:
    <name>.features.fbvt   (Hf, Wf, C) feature map, or
    <name>.classes.fbvt    (Hf, Wf) class ids (lifted as one-hot features)
    <name>.depth.fbvt      optional (Hf, Wf) range depth; non-finite = no hit.
                           Without it every bin gets weight 1/D.

Outputs (in --out-dir):
    <name>.rays.fbvt, <name>.valid.fbvt
    points.{positions,features,camera_id,pixel_id,bin_id,depth_weight}.fbvt
    per_camera.fbvt (K, C, nx, ny), counts.fbvt (K, nx, ny)
"""

import argparse
from pathlib import Path
from typing import Tuple

import numpy as np

from fisheye_bev.commands.common import add_common_arguments, load_setup, prepare_out_dir, workers_from
from fisheye_bev.services.camera import Camera
from fisheye_bev.services.lift import (
    DepthBins,
    LiftedPoints,
    build_ray_grid,
    lift_points,
    lift_points_indexed,
    lift_summary,
    uniform_depth,
)
from fisheye_bev.services.metrics import NUM_CLASSES
from fisheye_bev.services.pool import REDUCTIONS, splat
from fisheye_bev.services.tensor_io import read_tensor, write_tensor, write_tensors
from fisheye_bev.utils.errors import DataError, ShapeError
from fisheye_bev.utils.logger import setup_logger

logger = setup_logger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser('project', help='Lift per-camera image tensors into the BEV grid')
    add_common_arguments(parser)
    parser.add_argument('--images', type=Path, required=True, help='Directory of per-camera image tensors')
    parser.add_argument('--reduce', default='sum', help=f"Splat reduction ({', '.join(REDUCTIONS)})")
    parser.set_defaults(handler=run)


def read_camera_inputs(directory: Path, name: str) -> Tuple[np.ndarray, np.ndarray]:
    """(features (Hf, Wf, C), depth (Hf, Wf) or None) of one camera."""
    features_path = directory / f"{name}.features.fbvt"
    classes_path = directory / f"{name}.classes.fbvt"
    if features_path.exists():
        features = read_tensor(features_path).astype(np.float64)
        if features.ndim != 3:
            raise ShapeError(f"{features_path}: feature map must be (Hf, Wf, C), got {features.shape}")
    elif classes_path.exists():
        classes = read_tensor(classes_path)
        if classes.ndim != 2:
            raise ShapeError(f"{classes_path}: class image must be (Hf, Wf), got {classes.shape}")
        if classes.size and classes.max() >= NUM_CLASSES:
            raise DataError(f"{classes_path}: class ids must lie in [0, {NUM_CLASSES})")
        features = np.eye(NUM_CLASSES)[classes.astype(np.int64)]
    else:
        raise DataError(f"No image tensor for camera '{name}': expected {features_path} or {classes_path}")

    depth_path = directory / f"{name}.depth.fbvt"
    depth = None
    if depth_path.exists():
        depth = read_tensor(depth_path).astype(np.float64)
        if depth.shape != features.shape[:2]:
            raise ShapeError(f"{depth_path}: depth {depth.shape} does not match features {features.shape[:2]}")
    return features, depth


def lift_camera(camera: Camera, camera_id: int, features: np.ndarray, depth: np.ndarray,
                bins: DepthBins, out_dir: Path) -> LiftedPoints:
    rays = build_ray_grid(camera.intrinsics, features.shape[:2])
    write_tensor(out_dir / f"{camera.name}.rays.fbvt", rays.dirs)
    write_tensor(out_dir / f"{camera.name}.valid.fbvt", rays.valid)

    if depth is None:
        points = lift_points(rays, camera.extrinsics, bins, features, uniform_depth(rays, bins), camera_id)
    else:
        index, clamped = bins.index_of(depth)
        if np.any(clamped & np.isfinite(depth)):
            logger.warning(f"Camera '{camera.name}': {int(np.count_nonzero(clamped & np.isfinite(depth)))} "
                           f"depth(s) outside the bins were dropped")
        points = lift_points_indexed(rays, camera.extrinsics, bins, features, index, ~clamped, camera_id)
    if len(points) == 0:
        logger.warning(f"Camera '{camera.name}' lifted no points (no valid pixel inside its field of view)")
    return points


def run(args: argparse.Namespace) -> int:
    """
    Load-validate-compute-save for one set of camera images.

    Returns:
        Exit code (0 on success; errors propagate to the entry point)
    """
    # Step 1: Load and validate the rig
    setup = load_setup(args.config)
    workers = workers_from(args)
    out_dir = prepare_out_dir(args.out_dir)

    # Step 2: Read image tensors
    inputs = [read_camera_inputs(args.images, camera.name) for camera in setup.cameras]
    channels = {features.shape[2] for features, _ in inputs}
    if len(channels) != 1:
        raise ShapeError(f"Cameras disagree on feature channels: {sorted(channels)}")

    # Step 3: Lift and splat
    parts = [
        lift_camera(camera, number, features, depth, setup.bins, out_dir)
        for number, (camera, (features, depth)) in enumerate(zip(setup.cameras, inputs))
    ]
    points = LiftedPoints.concatenate(parts)
    grid = splat(points, setup.spec, args.reduce, num_cameras=len(setup.cameras), workers=workers)

    # Step 4: Save
    write_tensors(out_dir, {
        'points.positions': points.positions,
        'points.features': points.features,
        'points.camera_id': points.camera_id,
        'points.pixel_id': points.pixel_id,
        'points.bin_id': points.bin_id,
        'points.depth_weight': points.depth_weight,
        'per_camera': grid.per_camera,
        'counts': grid.per_camera_counts,
    })
    logger.info(f"Projection completed: {lift_summary(parts)}, {grid.dropped} outside the grid; wrote {out_dir}")
    return 0
