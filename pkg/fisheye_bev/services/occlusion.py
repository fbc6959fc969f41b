"""
Occlusion map service.

Turns splat coverage into a per-cell occlusion probability p(o): counts are
summed over a discrete disc around every cell, normalized by the threshold
tau and the disc area, and clamped to [0, 1].
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from fisheye_bev.utils import config
from fisheye_bev.utils.errors import ConfigError, DomainError, ShapeError
from fisheye_bev.utils.logger import setup_logger

logger = setup_logger(__name__)


@dataclass(eq=False)
class OcclusionMap:
    p_occluded: np.ndarray
    tau: float
    kernel_radius: int

    @property
    def visibility(self) -> np.ndarray:
        return occupancy(self.p_occluded)


def disc_kernel(radius: int) -> np.ndarray:
    """Integer offsets (dx, dy) with dx^2 + dy^2 <= radius^2 as a 0/1 mask."""
    if radius < 0 or int(radius) != radius:
        raise ConfigError(f"kernel_radius must be a non-negative integer, got {radius}")
    offsets = np.arange(-radius, radius + 1)
    dx, dy = np.meshgrid(offsets, offsets, indexing='ij')
    return (dx * dx + dy * dy <= radius * radius).astype(np.int64)


def occlusion_map(counts: np.ndarray, kernel_radius: Optional[int] = None, tau: Optional[float] = None) -> OcclusionMap:
    """
    Occlusion probability from per-cell point counts.

    local = disc-kernel sum of counts (cells outside the grid count 0)
    visibility = min(1, local / (tau * area)), area = cells in the disc
    p_occluded = 1 - visibility

    Raises:
        ConfigError: tau <= 0 or negative radius
        ShapeError: counts not 2-D
    """
    kernel_radius = config.KERNEL_RADIUS if kernel_radius is None else kernel_radius
    tau = config.TAU if tau is None else float(tau)
    if not tau > 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    counts = np.asarray(counts)
    if counts.ndim != 2:
        raise ShapeError(f"counts must be a 2-D grid, got shape {counts.shape}")
    if np.any(counts < 0):
        raise DomainError("counts must be non-negative")

    kernel = disc_kernel(kernel_radius)
    # integer convolution keeps the local sums exact
    local = ndimage.convolve(counts.astype(np.int64), kernel, mode='constant', cval=0)
    visibility = np.minimum(1.0, local / (tau * kernel.sum()))
    p_occluded = 1.0 - visibility

    logger.debug(
        f"Occlusion map: tau={tau}, radius={kernel_radius}, "
        f"{np.count_nonzero(p_occluded >= 1.0)} fully occluded of {p_occluded.size} cells"
    )
    return OcclusionMap(p_occluded=p_occluded, tau=tau, kernel_radius=int(kernel_radius))


def occupancy(p_occluded: np.ndarray) -> np.ndarray:
    """p'(o) = 1 - p(o), the visibility (occupancy) probability."""
    p = np.asarray(p_occluded, dtype=np.float64)
    if np.any(~((p >= 0.0) & (p <= 1.0))):
        raise DomainError("Occlusion probabilities must lie in [0, 1]")
    return 1.0 - p
