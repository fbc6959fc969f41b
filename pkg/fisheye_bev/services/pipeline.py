"""
Pipeline service.

Composes the services into one frame:
render -> lift (ground-truth depth) -> splat -> pool -> occlusion map -> evaluate.
The rectified variant resamples every view onto a virtual cylinder first and
lifts along the cylinder's rays.
"""

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from fisheye_bev.services.camera import CameraRig, cylindrical_rectify
from fisheye_bev.services.lift import DepthBins, LiftedPoints, RayGrid, build_ray_grid, lift_points_indexed
from fisheye_bev.services.metrics import NUM_CLASSES, EvalReport, evaluate
from fisheye_bev.services.occlusion import OcclusionMap, occlusion_map
from fisheye_bev.services.pool import BevGrid, GridSpec, PoolStrategy, init_pool_params, pool, splat
from fisheye_bev.services.scenesim import (
    SURFACE_NONE,
    GroundTruthVisibility,
    RenderedView,
    Scene,
    gt_depth_bins,
    gt_occlusion,
    render_view,
    render_views,
)
from fisheye_bev.utils import config
from fisheye_bev.utils.logger import setup_logger

logger = setup_logger(__name__)

RECTIFIED_VALID_THRESHOLD = 0.5


@dataclass(frozen=True)
class PipelineConfig:
    """
    Settings of one frame.

    Attributes:
        spec: BEV grid
        bins: Depth bins
        stride: (sy, sx) image pixels per feature cell
        strategy: Pooling strategy
        reduce: Splat reduction
        tau: Occlusion threshold
        kernel_radius: Occlusion kernel radius (cells)
        visibility_samples: Sub-grid per cell for the visibility labels
        rectify_hfov: Horizontal FOV of the cylinder (radians) on the rectified path
    """

    spec: GridSpec = field(default_factory=GridSpec.centered)
    bins: DepthBins = field(default_factory=lambda: DepthBins(config.DEPTH_MIN, config.DEPTH_MAX, config.DEPTH_STEP))
    stride: Tuple[int, int] = (config.FEATURE_STRIDE, config.FEATURE_STRIDE)
    strategy: PoolStrategy = PoolStrategy.SUM
    reduce: str = 'sum'
    tau: float = field(default_factory=lambda: config.TAU)
    kernel_radius: int = field(default_factory=lambda: config.KERNEL_RADIUS)
    visibility_samples: int = field(default_factory=lambda: config.VISIBILITY_SUBSAMPLES)
    rectify_hfov: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, 'strategy', PoolStrategy.parse(self.strategy))
        object.__setattr__(self, 'stride', tuple(int(s) for s in self.stride))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'grid': self.spec.to_dict(),
            'depth_bins': {'d_min': self.bins.d_min, 'd_max': self.bins.d_max, 'step': self.bins.step},
            'stride': list(self.stride),
            'strategy': self.strategy.value,
            'reduce': self.reduce,
            'tau': self.tau,
            'kernel_radius': self.kernel_radius,
            'visibility_samples': self.visibility_samples,
            'rectify_hfov': self.rectify_hfov,
        }


def config_hash(payload: Dict[str, Any]) -> str:
    """sha256 of the canonical JSON form of a configuration."""
    canonical = json.dumps(payload, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


@dataclass(eq=False)
class FrameResult:
    views: List[RenderedView]
    grid: BevGrid
    pooled: np.ndarray
    pred_class: np.ndarray
    occlusion: OcclusionMap
    gt_visibility: GroundTruthVisibility
    report: EvalReport
    clamped_pixels: int


def one_hot(classes: np.ndarray, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """(..., num_classes) one-hot features of a class-id image."""
    return np.eye(num_classes)[np.asarray(classes, dtype=np.int64)]


def intrinsic_vectors(rig: CameraRig) -> np.ndarray:
    return np.stack([camera.intrinsics.normalized_vector() for camera in rig])


def predict_classes(pooled: np.ndarray) -> np.ndarray:
    """Per-cell argmax over class channels; ties go to the lower class id."""
    return np.argmax(pooled, axis=0).astype(np.uint8)


def _lift_view(view: RenderedView, rig: CameraRig, bins: DepthBins) -> Tuple[LiftedPoints, int]:
    targets = gt_depth_bins(view, bins)
    hit = targets.hit & ~targets.clamped
    camera = rig[view.camera]
    points = lift_points_indexed(
        view.rays, camera.extrinsics, bins, one_hot(view.semantic_image),
        targets.index, hit, camera_id=view.camera,
    )
    if len(points) == 0:
        logger.warning(f"Camera '{camera.name}' lifted no points")
    return points, int(np.count_nonzero(targets.clamped))


def _rectified_view(view: RenderedView, rig: CameraRig, out_size: Tuple[int, int],
                    hfov: Optional[float]) -> RenderedView:
    """Resample a full-resolution view onto a cylinder and re-derive class and depth."""
    intr = rig[view.camera].intrinsics
    hit = np.isfinite(view.depth_image)
    channels = np.concatenate([
        one_hot(view.semantic_image),
        np.where(hit, view.depth_image, 0.0)[..., None],
        hit[..., None].astype(np.float64),
    ], axis=-1)
    rectified = cylindrical_rectify(intr, channels, out_size=out_size, hfov=hfov)

    weight = rectified.image[..., -1]
    valid = rectified.valid & (weight > RECTIFIED_VALID_THRESHOLD)
    depth = np.where(valid, rectified.image[..., -2] / np.where(valid, weight, 1.0), np.inf)
    semantic = np.where(valid, np.argmax(rectified.image[..., :NUM_CLASSES], axis=-1), 0).astype(np.uint8)

    dirs = rectified.intrinsics.pixel_rays()
    rays = RayGrid(dirs=np.where(rectified.valid[..., None], dirs, 0.0), valid=rectified.valid,
                   stride=(intr.height // out_size[0], intr.width // out_size[1]))
    # surface codes do not survive resampling
    surface = np.full(out_size, SURFACE_NONE, dtype=np.uint8)
    return RenderedView(semantic_image=semantic, depth_image=depth, surface_image=surface,
                        camera=view.camera, rays=rays)


def render_for(scene: Scene, rig: CameraRig, cfg: PipelineConfig, rectify: bool = False) -> List[RenderedView]:
    if not rectify:
        return render_views(scene, rig, cfg.stride)
    views = []
    for number, camera in enumerate(rig):
        intr = camera.intrinsics
        full = render_view(scene, camera, number, build_ray_grid(intr, (intr.height, intr.width)))
        out_size = (intr.height // cfg.stride[0], intr.width // cfg.stride[1])
        views.append(_rectified_view(full, rig, out_size, cfg.rectify_hfov))
    return views


def lift_frame(
    scene: Scene,
    rig: CameraRig,
    cfg: PipelineConfig,
    rectify: bool = False,
    workers: Optional[int] = None,
) -> Tuple[List[RenderedView], BevGrid, int]:
    """
    Render, lift with ground-truth depth and splat one frame.

    Returns:
        (views, grid, clamped pixel count)
    """
    workers = config.WORKERS if workers is None else workers
    views = render_for(scene, rig, cfg, rectify)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            lifted = list(executor.map(lambda v: _lift_view(v, rig, cfg.bins), views))
    else:
        lifted = [_lift_view(view, rig, cfg.bins) for view in views]

    clamped = sum(count for _, count in lifted)
    if clamped:
        logger.warning(f"{clamped} hit pixel(s) fell outside the depth bins and were dropped")
    points = LiftedPoints.concatenate([p for p, _ in lifted])
    grid = splat(points, cfg.spec, cfg.reduce, num_cameras=len(rig), workers=workers)
    logger.info(f"Lifted {len(points)} points, {grid.dropped} outside the grid")
    return views, grid, clamped


def run_frame(
    scene: Scene,
    rig: CameraRig,
    cfg: PipelineConfig,
    rectify: bool = False,
    workers: Optional[int] = None,
) -> FrameResult:
    """
    Full frame: lift/splat, pool with freshly initialized parameters, predict
    classes by argmax, build the occlusion map and evaluate against the scene.
    """
    views, grid, clamped = lift_frame(scene, rig, cfg, rectify, workers)
    params = init_pool_params(cfg.strategy, grid.per_camera_counts, NUM_CLASSES,
                              intrinsic_vectors(rig), grid.per_camera)
    pooled = pool(grid.per_camera, params, grid.per_camera_counts)
    pred_class = predict_classes(pooled)
    occ = occlusion_map(grid.counts, cfg.kernel_radius, cfg.tau)
    gt = gt_occlusion(scene, rig, cfg.visibility_samples)
    report = evaluate(pred_class, occ.p_occluded, scene.semantic, gt.p_occluded)
    logger.info(f"Frame evaluated: mIoU={report.miou:.3f}")
    return FrameResult(
        views=views, grid=grid, pooled=pooled, pred_class=pred_class, occlusion=occ,
        gt_visibility=gt, report=report, clamped_pixels=clamped,
    )
