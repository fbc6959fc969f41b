"""
BEV pooling service.

Scatters lifted points into a metric BEV grid (splat) and merges the
per-camera grids with plain reductions or one of the learnable strategies:

- weighted_sum:    F = sum_k W_k * F_k                      (W per camera, channel, cell)
- per_cell_sensor: F = sum_k w_k[i, j] * F_k                (one weight per camera and cell)
- intrinsic_embed: F = sum_k s_k * (F_k - mu_k) + E_k       (s_k = M @ v_k, v_k normalized intrinsics)

All learnable strategies have analytic gradients (pool_backward).
"""

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from fisheye_bev.services.camera import INTRINSIC_VECTOR_SIZE
from fisheye_bev.services.lift import LiftedPoints
from fisheye_bev.utils import config
from fisheye_bev.utils.errors import ConfigError, DataError, ShapeError, UsageError
from fisheye_bev.utils.logger import setup_logger

logger = setup_logger(__name__)

REDUCTIONS = ('sum', 'max', 'mean')


# =============================================================================
# Grid
# =============================================================================

@dataclass(frozen=True)
class GridSpec:
    """Metric BEV extent in the vehicle frame with square cells."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    cell: float

    def __post_init__(self):
        for name in ('x_min', 'x_max', 'y_min', 'y_max', 'cell'):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ConfigError(f"Grid {name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        if self.cell <= 0:
            raise ConfigError(f"Grid cell must be > 0, got {self.cell}")
        for axis, lo, hi in (('x', self.x_min, self.x_max), ('y', self.y_min, self.y_max)):
            cells = (hi - lo) / self.cell
            if hi <= lo or abs(cells - round(cells)) > 1e-9 * max(1.0, cells):
                raise ConfigError(
                    f"Grid {axis} extent [{lo}, {hi}) is not a positive whole number of {self.cell} m cells"
                )
            if not lo <= 0.0 < hi:
                raise ConfigError(f"Ego origin must lie inside the grid {axis} extent [{lo}, {hi})")

    @classmethod
    def centered(cls, half_range: Optional[float] = None, cell: Optional[float] = None) -> 'GridSpec':
        """Square grid [-r, r) x [-r, r) around the ego vehicle."""
        r = config.GRID_RANGE if half_range is None else half_range
        return cls(-r, r, -r, r, config.GRID_CELL if cell is None else cell)

    @property
    def nx(self) -> int:
        return int(round((self.x_max - self.x_min) / self.cell))

    @property
    def ny(self) -> int:
        return int(round((self.y_max - self.y_min) / self.cell))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.nx, self.ny

    def cell_index(self, x, y) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(ix, iy, inside) for metric positions; ix = floor((x - x_min) / cell)."""
        ix = np.floor((np.asarray(x, dtype=np.float64) - self.x_min) / self.cell)
        iy = np.floor((np.asarray(y, dtype=np.float64) - self.y_min) / self.cell)
        inside = (ix >= 0) & (ix < self.nx) & (iy >= 0) & (iy < self.ny)
        ix = np.where(inside, ix, 0).astype(np.int64)
        iy = np.where(inside, iy, 0).astype(np.int64)
        return ix, iy, inside

    def cell_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """(nx, ny) arrays of cell-center x and y."""
        xs = self.x_min + (np.arange(self.nx) + 0.5) * self.cell
        ys = self.y_min + (np.arange(self.ny) + 0.5) * self.cell
        return np.meshgrid(xs, ys, indexing='ij')

    def to_dict(self) -> Dict[str, float]:
        return {'x_min': self.x_min, 'x_max': self.x_max, 'y_min': self.y_min, 'y_max': self.y_max, 'cell': self.cell}


@dataclass(eq=False)
class SplatState:
    """Forward bookkeeping retained for splat_backward."""

    reduce: str
    order: np.ndarray          # indices of in-extent points in deterministic order
    target: np.ndarray         # camera * ncells + cell for each ordered point
    num_points: int
    argmax: Optional[np.ndarray] = None   # (K * ncells, C) winning point per target and channel


@dataclass(eq=False)
class BevGrid:
    """
    Splat result.

    Attributes:
        features: (C, nx, ny) merged over cameras
        counts: (nx, ny) points per cell
        per_camera: (K, C, nx, ny) before merging
        per_camera_counts: (K, nx, ny)
        dropped: points outside the extent
    """

    features: np.ndarray
    counts: np.ndarray
    per_camera: np.ndarray
    per_camera_counts: np.ndarray
    dropped: int = 0
    state: Optional[SplatState] = field(default=None, repr=False)

    @property
    def num_cameras(self) -> int:
        return int(self.per_camera.shape[0])


# =============================================================================
# Splat
# =============================================================================

def _accumulate(reduce: str, acc: np.ndarray, target: np.ndarray, feats: np.ndarray,
                bounds: List[Tuple[int, int]], workers: int) -> None:
    def run(lo_hi):
        lo, hi = lo_hi
        if hi <= lo:
            return
        if reduce == 'max':
            np.maximum.at(acc, target[lo:hi], feats[lo:hi])
        else:
            np.add.at(acc, target[lo:hi], feats[lo:hi])

    if workers <= 1 or len(bounds) <= 1:
        for lo_hi in bounds:
            run(lo_hi)
        return
    # partitions cover disjoint cell ranges, so per-cell order matches the serial pass
    with ThreadPoolExecutor(max_workers=workers) as executor:
        list(executor.map(run, bounds))


def _partition(cell_sorted: np.ndarray, ncells: int, workers: int) -> List[Tuple[int, int]]:
    if workers <= 1:
        return [(0, cell_sorted.size)]
    cuts = np.linspace(0, ncells, workers + 1).astype(np.int64)
    starts = np.searchsorted(cell_sorted, cuts, side='left')
    return [(int(starts[i]), int(starts[i + 1])) for i in range(workers)]


def splat(
    points: LiftedPoints,
    spec: GridSpec,
    reduce: str = 'sum',
    num_cameras: Optional[int] = None,
    workers: Optional[int] = None,
) -> BevGrid:
    """
    Scatter lifted points into the grid.

    Points are ordered by (cell, camera_id, pixel_id, bin_id) before
    accumulation, so output bytes do not depend on input order or on the
    number of workers. Counts are incremented per point for every reduction.

    Args:
        points: Lifted points
        spec: Grid extent
        reduce: 'sum', 'max' or 'mean'
        num_cameras: K of the per-camera stack (default: max camera_id + 1)
        workers: Threads over contiguous cell ranges (default: FBEV_WORKERS)

    Raises:
        ConfigError: unknown reduction
        DataError: non-finite features or positions
    """
    if reduce not in REDUCTIONS:
        raise ConfigError(f"Unknown splat reduction '{reduce}'. Expected one of: {', '.join(REDUCTIONS)}")
    workers = config.WORKERS if workers is None else workers
    if not np.all(np.isfinite(points.features)):
        raise DataError("Splat input contains non-finite features")
    if not np.all(np.isfinite(points.positions)):
        raise DataError("Splat input contains non-finite positions")

    n = len(points)
    channels = points.channels
    k = num_cameras if num_cameras is not None else (int(points.camera_id.max()) + 1 if n else 1)
    if n and (points.camera_id.min() < 0 or points.camera_id.max() >= k):
        raise DataError(f"camera_id outside [0, {k})")
    nx, ny = spec.shape
    ncells = nx * ny

    ix, iy, inside = spec.cell_index(points.positions[:, 0], points.positions[:, 1])
    dropped = int(n - np.count_nonzero(inside))
    if dropped:
        logger.debug(f"Splat dropped {dropped} of {n} points outside the grid extent")

    kept = np.flatnonzero(inside)
    cell = ix[kept] * ny + iy[kept]
    order_local = np.lexsort((points.bin_id[kept], points.pixel_id[kept], points.camera_id[kept], cell))
    order = kept[order_local]
    cell_sorted = cell[order_local]
    target = points.camera_id[order] * ncells + cell_sorted
    feats = points.features[order]

    counts_flat = np.bincount(target, minlength=k * ncells).astype(np.int64)
    init = -np.inf if reduce == 'max' else 0.0
    acc = np.full((k * ncells, channels), init)
    _accumulate(reduce, acc, target, feats, _partition(cell_sorted, ncells, workers), workers)

    occupied = counts_flat > 0
    argmax = None
    if reduce == 'max':
        acc[~occupied] = 0.0
        argmax = np.full((k * ncells, channels), -1, dtype=np.int64)
        for c in range(channels):
            winners = np.flatnonzero(feats[:, c] == acc[target, c])
            # first occurrence in the deterministic order wins ties
            first_target, first_pos = np.unique(target[winners], return_index=True)
            argmax[first_target, c] = order[winners[first_pos]]
    elif reduce == 'mean':
        acc[occupied] /= counts_flat[occupied, None]

    per_camera = acc.reshape(k, nx, ny, channels).transpose(0, 3, 1, 2).copy()
    per_camera_counts = counts_flat.reshape(k, nx, ny)
    counts = per_camera_counts.sum(axis=0)

    if reduce == 'sum':
        features = pool_sum(per_camera)
    elif reduce == 'max':
        features = pool_max(per_camera, per_camera_counts)
    else:
        sums = np.zeros((k * ncells, channels))
        np.add.at(sums, target, feats)
        sums = sums.reshape(k, nx, ny, channels).transpose(0, 3, 1, 2)
        total = pool_sum(sums)
        features = np.where(counts > 0, total / np.maximum(counts, 1), 0.0)

    state = SplatState(reduce=reduce, order=order, target=target, num_points=n, argmax=argmax)
    return BevGrid(
        features=features,
        counts=counts,
        per_camera=per_camera,
        per_camera_counts=per_camera_counts,
        dropped=dropped,
        state=state,
    )


def splat_backward(grid: BevGrid, upstream: np.ndarray) -> np.ndarray:
    """
    Gradient of a loss w.r.t. the point features, given its gradient w.r.t. the
    per-camera grids. Max routes each channel's gradient to its winning point.

    Returns:
        (N, C) gradient; zero for points outside the extent

    Raises:
        UsageError: the grid carries no retained splat state
    """
    state = grid.state
    if state is None:
        raise UsageError("splat_backward needs the state retained by splat(); none is attached to this grid")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != grid.per_camera.shape:
        raise ShapeError(f"upstream must be {grid.per_camera.shape}, got {upstream.shape}")

    k, channels, nx, ny = upstream.shape
    flat = upstream.transpose(0, 2, 3, 1).reshape(k * nx * ny, channels)
    grad = np.zeros((state.num_points, channels))

    if state.reduce == 'max':
        targets, chans = np.nonzero(state.argmax >= 0)
        grad[state.argmax[targets, chans], chans] = flat[targets, chans]
        return grad

    routed = flat[state.target]
    if state.reduce == 'mean':
        counts = grid.per_camera_counts.reshape(-1)[state.target]
        routed = routed / counts[:, None]
    grad[state.order] = routed
    return grad


# =============================================================================
# Pooling strategies
# =============================================================================

class PoolStrategy(str, Enum):
    SUM = 'sum'
    MAX = 'max'
    MEAN = 'mean'
    WEIGHTED_SUM = 'weighted_sum'
    PER_CELL_SENSOR = 'per_cell_sensor'
    INTRINSIC_EMBED = 'intrinsic_embed'

    @classmethod
    def parse(cls, value: Union[str, 'PoolStrategy']) -> 'PoolStrategy':
        if isinstance(value, PoolStrategy):
            return value
        key = str(value).strip().lower().replace('-', '_')
        aliases = {'weighted': cls.WEIGHTED_SUM, 'per_cell': cls.PER_CELL_SENSOR, 'intrinsic': cls.INTRINSIC_EMBED}
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            known = ', '.join(s.value for s in cls)
            raise ConfigError(f"Unknown pooling strategy '{value}'. Expected one of: {known}")

    @property
    def learnable(self) -> Tuple[str, ...]:
        return LEARNABLE[self]


LEARNABLE = {
    PoolStrategy.SUM: (),
    PoolStrategy.MAX: (),
    PoolStrategy.MEAN: (),
    PoolStrategy.WEIGHTED_SUM: ('W',),
    PoolStrategy.PER_CELL_SENSOR: ('w_cell',),
    PoolStrategy.INTRINSIC_EMBED: ('E', 'mu', 'intrinsic_map'),
}


@dataclass(eq=False)
class PoolParams:
    """
    Parameters of every pooling strategy; only the active strategy's fields are read.

    Attributes:
        strategy: Active strategy
        W: (K, C, nx, ny) per-camera weights (weighted_sum)
        w_cell: (K, nx, ny) per-camera, per-cell weights (per_cell_sensor)
        E: (K, C, nx, ny) additive embeddings (intrinsic_embed)
        mu: (K, C) per-channel feature means (intrinsic_embed)
        intrinsic_map: (C, 8) linear map from normalized intrinsics to per-channel scale
        intrinsic_vectors: (K, 8) normalized intrinsic vector of each camera (fixed)
        coverage: (K, nx, ny) calibration-pass coverage (counts > 0)
    """

    strategy: PoolStrategy
    W: np.ndarray
    w_cell: np.ndarray
    E: np.ndarray
    mu: np.ndarray
    intrinsic_map: np.ndarray
    intrinsic_vectors: np.ndarray
    coverage: np.ndarray

    def __post_init__(self):
        self.strategy = PoolStrategy.parse(self.strategy)

    @property
    def num_cameras(self) -> int:
        return int(self.w_cell.shape[0])

    @property
    def intrinsic_scale(self) -> np.ndarray:
        """(K, C) per-channel scale of each camera."""
        return self.intrinsic_vectors @ self.intrinsic_map.T

    def learnable(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.strategy.learnable}

    def with_strategy(self, strategy: Union[str, PoolStrategy]) -> 'PoolParams':
        return replace(self, strategy=PoolStrategy.parse(strategy))

    def copy(self) -> 'PoolParams':
        return PoolParams(
            strategy=self.strategy,
            W=self.W.copy(), w_cell=self.w_cell.copy(), E=self.E.copy(), mu=self.mu.copy(),
            intrinsic_map=self.intrinsic_map.copy(), intrinsic_vectors=self.intrinsic_vectors.copy(),
            coverage=self.coverage.copy(),
        )

    def check(self, per_camera: np.ndarray) -> None:
        """Shape and finiteness of the active strategy's fields against a per-camera stack."""
        k, c, nx, ny = per_camera.shape
        expected = {
            'W': (k, c, nx, ny),
            'w_cell': (k, nx, ny),
            'E': (k, c, nx, ny),
            'mu': (k, c),
            'intrinsic_map': (c, INTRINSIC_VECTOR_SIZE),
        }
        names = list(self.strategy.learnable)
        if self.strategy == PoolStrategy.INTRINSIC_EMBED:
            names.append('intrinsic_vectors')
            expected['intrinsic_vectors'] = (k, INTRINSIC_VECTOR_SIZE)
        for name in names:
            value = getattr(self, name)
            if value.shape != expected[name]:
                raise ShapeError(f"PoolParams.{name} must be {expected[name]}, got {value.shape}")
            if not np.all(np.isfinite(value)):
                raise DataError(f"PoolParams.{name} contains non-finite values")


def init_pool_params(
    strategy: Union[str, PoolStrategy],
    per_camera_counts: np.ndarray,
    channels: int,
    intrinsic_vectors: Optional[np.ndarray] = None,
    per_camera: Optional[np.ndarray] = None,
) -> PoolParams:
    """
    Initialize pooling parameters from a calibration pass.

    - W = 1 (weighted_sum starts as a plain sum)
    - w_cell = 1 / N_ij for each camera reaching the cell, 0 elsewhere
    - E = 0; intrinsic_map = zeros with a ones bias column (all scales start at 1)
    - mu = per-channel mean of each camera's features over the cells it covers

    Args:
        strategy: Active strategy
        per_camera_counts: (K, nx, ny) point counts of the calibration pass
        channels: Feature channels C
        intrinsic_vectors: (K, 8) normalized intrinsics (default: bias-only vectors)
        per_camera: (K, C, nx, ny) calibration features used for mu (default: mu = 0)
    """
    counts = np.asarray(per_camera_counts)
    if counts.ndim != 3:
        raise ShapeError(f"per_camera_counts must be (K, nx, ny), got {counts.shape}")
    k, nx, ny = counts.shape
    coverage = counts > 0
    covering = coverage.sum(axis=0)
    w_cell = np.where(coverage, 1.0 / np.maximum(covering, 1)[None], 0.0)

    mu = np.zeros((k, channels))
    if per_camera is not None:
        per_camera = np.asarray(per_camera, dtype=np.float64)
        if per_camera.shape != (k, channels, nx, ny):
            raise ShapeError(f"per_camera must be {(k, channels, nx, ny)}, got {per_camera.shape}")
        for cam in range(k):
            seen = coverage[cam]
            if np.any(seen):
                mu[cam] = per_camera[cam][:, seen].mean(axis=1)

    if intrinsic_vectors is None:
        intrinsic_vectors = np.zeros((k, INTRINSIC_VECTOR_SIZE))
        intrinsic_vectors[:, -1] = 1.0
    intrinsic_vectors = np.asarray(intrinsic_vectors, dtype=np.float64)
    if intrinsic_vectors.shape != (k, INTRINSIC_VECTOR_SIZE):
        raise ShapeError(f"intrinsic_vectors must be {(k, INTRINSIC_VECTOR_SIZE)}, got {intrinsic_vectors.shape}")
    intrinsic_map = np.zeros((channels, INTRINSIC_VECTOR_SIZE))
    intrinsic_map[:, -1] = 1.0

    return PoolParams(
        strategy=PoolStrategy.parse(strategy),
        W=np.ones((k, channels, nx, ny)),
        w_cell=w_cell,
        E=np.zeros((k, channels, nx, ny)),
        mu=mu,
        intrinsic_map=intrinsic_map,
        intrinsic_vectors=intrinsic_vectors,
        coverage=coverage,
    )


def _check_stack(per_camera: np.ndarray) -> np.ndarray:
    per_camera = np.asarray(per_camera, dtype=np.float64)
    if per_camera.ndim != 4:
        raise ShapeError(f"per_camera must be (K, C, nx, ny), got {per_camera.shape}")
    return per_camera


def _coverage(per_camera: np.ndarray, counts: Optional[np.ndarray]) -> np.ndarray:
    if counts is None:
        return np.ones((per_camera.shape[0],) + per_camera.shape[2:], dtype=bool)
    counts = np.asarray(counts)
    expected = (per_camera.shape[0],) + per_camera.shape[2:]
    if counts.shape != expected:
        raise ShapeError(f"per-camera counts must be {expected}, got {counts.shape}")
    return counts > 0


def pool_sum(per_camera: np.ndarray) -> np.ndarray:
    per_camera = _check_stack(per_camera)
    out = np.zeros(per_camera.shape[1:])
    for feats in per_camera:
        out += feats
    return out


def pool_max(per_camera: np.ndarray, counts: Optional[np.ndarray] = None) -> np.ndarray:
    """Max over the cameras covering each cell; 0 where none does."""
    per_camera = _check_stack(per_camera)
    coverage = _coverage(per_camera, counts)
    masked = np.where(coverage[:, None], per_camera, -np.inf)
    out = masked.max(axis=0)
    return np.where(np.isfinite(out), out, 0.0)


def pool_mean(per_camera: np.ndarray, counts: Optional[np.ndarray] = None) -> np.ndarray:
    """Average over the N_ij cameras covering each cell; 0 where none does."""
    per_camera = _check_stack(per_camera)
    coverage = _coverage(per_camera, counts)
    covering = coverage.sum(axis=0)
    total = pool_sum(np.where(coverage[:, None], per_camera, 0.0))
    return np.where(covering > 0, total / np.maximum(covering, 1), 0.0)


def pool_weighted_sum(per_camera: np.ndarray, W: np.ndarray) -> np.ndarray:
    """F_total = sum_k W_k * F_k."""
    per_camera = _check_stack(per_camera)
    W = np.asarray(W, dtype=np.float64)
    if W.shape != per_camera.shape:
        raise ShapeError(f"W must match per_camera {per_camera.shape}, got {W.shape}")
    out = np.zeros(per_camera.shape[1:])
    for weights, feats in zip(W, per_camera):
        out += weights * feats
    return out


def pool_per_cell(per_camera: np.ndarray, w_cell: np.ndarray) -> np.ndarray:
    """F_total[c, i, j] = sum_k w_cell[k, i, j] * F_k[c, i, j]."""
    per_camera = _check_stack(per_camera)
    w_cell = np.asarray(w_cell, dtype=np.float64)
    expected = (per_camera.shape[0],) + per_camera.shape[2:]
    if w_cell.shape != expected:
        raise ShapeError(f"w_cell must be {expected}, got {w_cell.shape}")
    out = np.zeros(per_camera.shape[1:])
    for weights, feats in zip(w_cell, per_camera):
        out += weights[None] * feats
    return out


def pool_intrinsic_embed(per_camera: np.ndarray, params: PoolParams) -> np.ndarray:
    """
    F_total = sum_k s_k * (F_k - mu_k) + E_k.

    s_k is the per-channel scale produced by the learnable intrinsic map. The
    embedding is added everywhere, including cells no camera reaches.
    """
    per_camera = _check_stack(per_camera)
    params.with_strategy(PoolStrategy.INTRINSIC_EMBED).check(per_camera)
    scale = params.intrinsic_scale
    out = np.zeros(per_camera.shape[1:])
    for cam, feats in enumerate(per_camera):
        out += scale[cam][:, None, None] * (feats - params.mu[cam][:, None, None]) + params.E[cam]
    return out


def pool(per_camera: np.ndarray, params: PoolParams, counts: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Merge a per-camera stack with the active strategy.

    Args:
        per_camera: (K, C, nx, ny)
        params: Pooling parameters
        counts: (K, nx, ny) per-camera point counts for max/mean (default: params.coverage)
    """
    per_camera = _check_stack(per_camera)
    strategy = params.strategy
    if counts is None:
        counts = params.coverage
    if strategy == PoolStrategy.SUM:
        return pool_sum(per_camera)
    if strategy == PoolStrategy.MAX:
        return pool_max(per_camera, counts)
    if strategy == PoolStrategy.MEAN:
        return pool_mean(per_camera, counts)
    params.check(per_camera)
    if strategy == PoolStrategy.WEIGHTED_SUM:
        return pool_weighted_sum(per_camera, params.W)
    if strategy == PoolStrategy.PER_CELL_SENSOR:
        return pool_per_cell(per_camera, params.w_cell)
    return pool_intrinsic_embed(per_camera, params)


def pool_backward(
    strategy: Union[str, PoolStrategy],
    per_camera: np.ndarray,
    params: PoolParams,
    upstream_grad: np.ndarray,
    counts: Optional[np.ndarray] = None,
) -> Dict[str, np.ndarray]:
    """
    Analytic gradients of the pooled grid w.r.t. its inputs.

    Args:
        strategy: Strategy used in the forward pass
        per_camera: (K, C, nx, ny) forward input
        params: Forward parameters
        upstream_grad: (C, nx, ny) dL/dF_total
        counts: (K, nx, ny) per-camera counts for max/mean (default: params.coverage)

    Returns:
        Dict with 'per_camera' plus one entry per learnable field of the strategy
        ('W'; 'w_cell'; 'E', 'mu', 'intrinsic_map').
    """
    strategy = PoolStrategy.parse(strategy)
    per_camera = _check_stack(per_camera)
    up = np.asarray(upstream_grad, dtype=np.float64)
    if up.shape != per_camera.shape[1:]:
        raise ShapeError(f"upstream_grad must be {per_camera.shape[1:]}, got {up.shape}")
    if counts is None:
        counts = params.coverage

    k = per_camera.shape[0]
    if strategy == PoolStrategy.SUM:
        return {'per_camera': np.broadcast_to(up, per_camera.shape).copy()}

    if strategy == PoolStrategy.MEAN:
        coverage = _coverage(per_camera, counts)
        covering = np.maximum(coverage.sum(axis=0), 1)
        return {'per_camera': np.where(coverage[:, None], up[None] / covering[None, None], 0.0)}

    if strategy == PoolStrategy.MAX:
        coverage = _coverage(per_camera, counts)
        masked = np.where(coverage[:, None], per_camera, -np.inf)
        # argmax returns the first camera on ties
        winner = masked.argmax(axis=0)
        any_cover = coverage.any(axis=0)[None]
        grad = np.zeros_like(per_camera)
        for cam in range(k):
            grad[cam] = np.where((winner == cam) & any_cover, up, 0.0)
        return {'per_camera': grad}

    params.with_strategy(strategy).check(per_camera)
    if strategy == PoolStrategy.WEIGHTED_SUM:
        return {'per_camera': up[None] * params.W, 'W': up[None] * per_camera}

    if strategy == PoolStrategy.PER_CELL_SENSOR:
        return {
            'per_camera': up[None] * params.w_cell[:, None],
            'w_cell': np.einsum('cij,kcij->kij', up, per_camera),
        }

    scale = params.intrinsic_scale
    centered = per_camera - params.mu[:, :, None, None]
    d_scale = np.einsum('cij,kcij->kc', up, centered)
    up_total = up.sum(axis=(1, 2))
    return {
        'per_camera': scale[:, :, None, None] * up[None],
        'E': np.broadcast_to(up, per_camera.shape).copy(),
        'mu': -scale * up_total[None, :],
        'intrinsic_map': d_scale.T @ params.intrinsic_vectors,
    }


class BevPooling:
    """
    Stateful pooling layer: forward retains its inputs, backward consumes them.
    """

    def __init__(self, params: PoolParams):
        self.params = params
        self._retained: Optional[Tuple[np.ndarray, Optional[np.ndarray]]] = None
        self._lock = threading.Lock()

    def forward(self, per_camera: np.ndarray, counts: Optional[np.ndarray] = None) -> np.ndarray:
        with self._lock:
            per_camera = _check_stack(per_camera)
            out = pool(per_camera, self.params, counts)
            self._retained = (per_camera, counts)
            return out

    def backward(self, upstream_grad: np.ndarray) -> Dict[str, np.ndarray]:
        with self._lock:
            if self._retained is None:
                raise UsageError("BevPooling.backward called without a retained forward pass")
            per_camera, counts = self._retained
            self._retained = None
            return pool_backward(self.params.strategy, per_camera, self.params, upstream_grad, counts)
