"""
Lift service.

Builds per-camera ray grids over the feature map and lifts image features
along depth bins into 3D points in the vehicle frame.
"""

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from fisheye_bev.services.camera import CameraExtrinsics, CameraIntrinsics, pixel_centers, pixels_to_rays
from fisheye_bev.utils.errors import ConfigError, DomainError, ShapeError
from fisheye_bev.utils.logger import setup_logger

logger = setup_logger(__name__)


@dataclass(frozen=True, eq=False)
class RayGrid:
    """
    Unit ray directions (camera frame) for every feature-map cell.

    Attributes:
        dirs: (Hf, Wf, 3) unit vectors; zero where invalid
        valid: (Hf, Wf) in-FOV mask
        stride: (sy, sx) source pixels per feature cell
    """

    dirs: np.ndarray
    valid: np.ndarray
    stride: Tuple[int, int]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.valid.shape


@dataclass(frozen=True)
class DepthBins:
    """Half-open range bins [lo, hi) along the ray, in meters."""

    d_min: float
    d_max: float
    step: float

    def __post_init__(self):
        for name in ('d_min', 'd_max', 'step'):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ConfigError(f"Depth bin {name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        if self.d_min <= 0:
            raise ConfigError(f"Depth bins need d_min > 0, got {self.d_min}")
        if self.step <= 0:
            raise ConfigError(f"Depth bins need step > 0, got {self.step}")
        if self.d_max <= self.d_min:
            raise ConfigError(f"Depth bins need d_max > d_min, got [{self.d_min}, {self.d_max})")

    def __len__(self) -> int:
        return max(1, math.ceil((self.d_max - self.d_min) / self.step - 1e-9))

    @property
    def edges(self) -> np.ndarray:
        return self.d_min + np.arange(len(self) + 1) * self.step

    @property
    def centers(self) -> np.ndarray:
        return self.d_min + (np.arange(len(self)) + 0.5) * self.step

    def index_of(self, depth) -> Tuple[np.ndarray, np.ndarray]:
        """
        Bin index of each depth, with out-of-range depths clamped.

        A depth on a bin edge belongs to the bin whose lower edge it is.

        Returns:
            (index, clamped): int array and the mask of depths outside [d_min, upper edge)
        """
        depth = np.asarray(depth, dtype=np.float64)
        edges = self.edges
        count = len(self)

        finite = np.isfinite(depth)
        raw = np.where(finite, np.floor((np.where(finite, depth, self.d_min) - self.d_min) / self.step), count)
        index = np.clip(raw, 0, count - 1).astype(np.int64)
        # floor() can land one bin off for depths that sit on an edge
        index = np.where((depth < edges[index]) & (index > 0), index - 1, index)
        index = np.where((depth >= edges[index + 1]) & (index < count - 1), index + 1, index)

        clamped = ~finite | (depth < edges[0]) | (depth >= edges[-1])
        return index, clamped


@dataclass(eq=False)
class LiftedPoints:
    """
    Points lifted into the vehicle frame.

    Attributes:
        positions: (N, 3) meters
        features: (N, C)
        camera_id: (N,) rig index of the source camera
        pixel_id: (N,) row-major feature-cell index in the source camera
        bin_id: (N,) depth-bin index
        depth_weight: (N,) depth probability the feature was scaled by
    """

    positions: np.ndarray
    features: np.ndarray
    camera_id: np.ndarray
    pixel_id: np.ndarray
    bin_id: np.ndarray
    depth_weight: np.ndarray

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    @property
    def channels(self) -> int:
        return int(self.features.shape[1])

    @classmethod
    def empty(cls, channels: int) -> 'LiftedPoints':
        return cls(
            positions=np.zeros((0, 3)),
            features=np.zeros((0, channels)),
            camera_id=np.zeros(0, dtype=np.int64),
            pixel_id=np.zeros(0, dtype=np.int64),
            bin_id=np.zeros(0, dtype=np.int64),
            depth_weight=np.zeros(0),
        )

    @classmethod
    def concatenate(cls, parts: Sequence['LiftedPoints']) -> 'LiftedPoints':
        if not parts:
            raise ShapeError("Cannot concatenate an empty list of lifted point sets")
        channels = {part.channels for part in parts}
        if len(channels) != 1:
            raise ShapeError(f"Lifted point sets disagree on channel count: {sorted(channels)}")
        return cls(
            positions=np.concatenate([p.positions for p in parts]),
            features=np.concatenate([p.features for p in parts]),
            camera_id=np.concatenate([p.camera_id for p in parts]),
            pixel_id=np.concatenate([p.pixel_id for p in parts]),
            bin_id=np.concatenate([p.bin_id for p in parts]),
            depth_weight=np.concatenate([p.depth_weight for p in parts]),
        )


def build_ray_grid(intr: CameraIntrinsics, feature_size: Tuple[int, int]) -> RayGrid:
    """
    Precompute the ray of every feature cell.

    Args:
        intr: Camera intrinsics
        feature_size: (Hf, Wf); must divide the image size by integer strides

    Returns:
        RayGrid whose cell (i, j) holds the ray through source pixel position
        ((j + 0.5) * sx, (i + 0.5) * sy)

    Raises:
        ConfigError: non-integer stride
    """
    hf, wf = (int(n) for n in feature_size)
    if hf < 1 or wf < 1:
        raise ConfigError(f"Feature size must be positive, got {feature_size}")
    if intr.height % hf or intr.width % wf:
        raise ConfigError(
            f"Feature size {hf}x{wf} does not divide the {intr.height}x{intr.width} image "
            f"by an integer stride"
        )
    stride = (intr.height // hf, intr.width // wf)
    u, v = pixel_centers(intr.width, intr.height, stride)
    dirs, valid = pixels_to_rays(intr, u, v)

    if not np.any(valid):
        logger.warning(f"Ray grid {hf}x{wf} has no cell inside theta_max={intr.model.theta_max}")
    return RayGrid(dirs=dirs, valid=valid, stride=stride)


def _rigid(points: np.ndarray, extr: CameraExtrinsics) -> np.ndarray:
    # elementwise products keep every row's arithmetic independent of batch size
    r, t = extr.rotation, extr.translation
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    return np.stack([
        r[0, 0] * x + r[0, 1] * y + r[0, 2] * z + t[0],
        r[1, 0] * x + r[1, 1] * y + r[1, 2] * z + t[1],
        r[2, 0] * x + r[2, 1] * y + r[2, 2] * z + t[2],
    ], axis=-1)


def _check_features(rays: RayGrid, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3 or features.shape[:2] != rays.shape:
        raise ShapeError(f"features must be {rays.shape + ('C',)}, got {features.shape}")
    return features


def lift_points(
    rays: RayGrid,
    extr: CameraExtrinsics,
    bins: DepthBins,
    features: np.ndarray,
    depth_dist: np.ndarray,
    camera_id: int = 0,
    prune_zero: bool = False,
) -> LiftedPoints:
    """
    Lift features along every depth bin (outer-product lift).

    Each valid cell p and bin d yields a point at
    rotation @ (dir_p * center_d) + translation carrying features_p * depth_dist_p[d].

    Args:
        rays: Ray grid of the camera
        extr: Camera pose
        bins: Depth bins (D of them)
        features: (Hf, Wf, C) feature map
        depth_dist: (Hf, Wf, D) non-negative depth weights
        camera_id: Rig index stamped on every point
        prune_zero: Drop points whose depth weight is zero

    Raises:
        ShapeError: dimension mismatch
        DomainError: negative or non-finite depth weight
    """
    features = _check_features(rays, features)
    depth_dist = np.asarray(depth_dist, dtype=np.float64)
    count = len(bins)
    if depth_dist.shape != rays.shape + (count,):
        raise ShapeError(f"depth_dist must be {rays.shape + (count,)}, got {depth_dist.shape}")
    bad = ~(np.isfinite(depth_dist) & (depth_dist >= 0))
    if np.any(bad):
        raise DomainError(f"depth_dist has {np.count_nonzero(bad)} negative or non-finite weight(s)")

    pixel = np.flatnonzero(rays.valid.ravel())
    dirs = rays.dirs.reshape(-1, 3)[pixel]
    weights = depth_dist.reshape(-1, count)[pixel]
    feats = features.reshape(-1, features.shape[2])[pixel]

    positions = _rigid(dirs[:, None, :] * bins.centers[None, :, None], extr)
    lifted = feats[:, None, :] * weights[:, :, None]

    pixel_id = np.repeat(pixel, count)
    bin_id = np.tile(np.arange(count), pixel.size)
    positions = positions.reshape(-1, 3)
    lifted = lifted.reshape(-1, features.shape[2])
    weights = weights.ravel()

    if prune_zero:
        keep = weights > 0
        positions, lifted, weights = positions[keep], lifted[keep], weights[keep]
        pixel_id, bin_id = pixel_id[keep], bin_id[keep]

    return LiftedPoints(
        positions=positions,
        features=lifted,
        camera_id=np.full(pixel_id.size, camera_id, dtype=np.int64),
        pixel_id=pixel_id.astype(np.int64),
        bin_id=bin_id.astype(np.int64),
        depth_weight=weights,
    )


def lift_points_indexed(
    rays: RayGrid,
    extr: CameraExtrinsics,
    bins: DepthBins,
    features: np.ndarray,
    bin_index: np.ndarray,
    hit: np.ndarray,
    camera_id: int = 0,
) -> LiftedPoints:
    """
    One-hot lift from bin indices: same points as ``lift_points(..., prune_zero=True)``
    with a one-hot depth_dist, without materializing the (Hf, Wf, D) tensor.

    Args:
        bin_index: (Hf, Wf) depth-bin index per cell
        hit: (Hf, Wf) cells that carry a depth (misses and clamped depths are False)
    """
    features = _check_features(rays, features)
    bin_index = np.asarray(bin_index)
    hit = np.asarray(hit, dtype=bool)
    if bin_index.shape != rays.shape or hit.shape != rays.shape:
        raise ShapeError(f"bin_index and hit must be {rays.shape}, got {bin_index.shape} and {hit.shape}")

    pixel = np.flatnonzero((rays.valid & hit).ravel())
    index = bin_index.ravel()[pixel].astype(np.int64)
    if index.size and (index.min() < 0 or index.max() >= len(bins)):
        raise DomainError(f"bin_index outside [0, {len(bins)})")

    dirs = rays.dirs.reshape(-1, 3)[pixel]
    positions = _rigid(dirs * bins.centers[index][:, None], extr)
    return LiftedPoints(
        positions=positions,
        features=features.reshape(-1, features.shape[2])[pixel],
        camera_id=np.full(pixel.size, camera_id, dtype=np.int64),
        pixel_id=pixel.astype(np.int64),
        bin_id=index,
        depth_weight=np.ones(pixel.size),
    )


def uniform_depth(rays: RayGrid, bins: DepthBins) -> np.ndarray:
    """Depth distribution with equal weight 1/D in every bin."""
    count = len(bins)
    return np.full(rays.shape + (count,), 1.0 / count)


def one_hot_depth(bin_index: np.ndarray, hit: np.ndarray, bins: DepthBins) -> np.ndarray:
    """(Hf, Wf, D) one-hot distribution; rows of non-hit cells are all zero."""
    dist = np.zeros(np.shape(bin_index) + (len(bins),))
    rows, cols = np.nonzero(hit)
    dist[rows, cols, np.asarray(bin_index)[rows, cols]] = 1.0
    return dist


def lift_summary(parts: List[LiftedPoints]) -> str:
    total = sum(len(p) for p in parts)
    return f"{total} points from {len(parts)} camera(s)"
