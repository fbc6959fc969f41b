"""
Synthetic scene service.

Generates deterministic desk-scale scenes (road, lane markings, vehicle
prisms, occluder walls), ray-casts them into per-camera semantic and depth
images and derives the ground-truth BEV semantic and visibility labels.
"""

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from fisheye_bev.services.camera import (
    Camera,
    CameraExtrinsics,
    CameraIntrinsics,
    CameraRig,
    DistortionModel,
    ModelKind,
    look_rotation,
    rays_to_pixels,
)
from fisheye_bev.services.lift import DepthBins, RayGrid, build_ray_grid, one_hot_depth
from fisheye_bev.services.metrics import BACKGROUND, INVALID, MARKINGS, STREET, VEHICLES
from fisheye_bev.services.pool import GridSpec
from fisheye_bev.utils import config
from fisheye_bev.utils.errors import ConfigError, GenerationError
from fisheye_bev.utils.logger import setup_logger

logger = setup_logger(__name__)

# Surface codes of rendered pixels
SURFACE_NONE = 0
SURFACE_GROUND = 1
SURFACE_VEHICLE = 2
SURFACE_WALL = 3

Point2 = Tuple[float, float]


# =============================================================================
# Scene primitives
# =============================================================================

@dataclass(frozen=True)
class Vehicle:
    """Oriented rectangle footprint extruded to a prism of the given height."""

    center: Point2
    length: float
    width: float
    yaw: float = 0.0
    height: float = field(default_factory=lambda: config.VEHICLE_HEIGHT)

    def to_local(self, x, y) -> Tuple[np.ndarray, np.ndarray]:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        dx = np.asarray(x, dtype=np.float64) - self.center[0]
        dy = np.asarray(y, dtype=np.float64) - self.center[1]
        return c * dx + s * dy, -s * dx + c * dy

    def contains(self, x, y) -> np.ndarray:
        lx, ly = self.to_local(x, y)
        return (np.abs(lx) <= self.length / 2) & (np.abs(ly) <= self.width / 2)

    @property
    def radius(self) -> float:
        return math.hypot(self.length, self.width) / 2

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        local = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]]) * [self.length / 2, self.width / 2]
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.asarray(self.center)


@dataclass(frozen=True)
class Wall:
    """Vertical zero-thickness wall over the segment start-end, from z=0 to height."""

    start: Point2
    end: Point2
    height: float = 2.0


@dataclass(frozen=True)
class Marking:
    """Painted stripe of the given width centered on the segment start-end."""

    start: Point2
    end: Point2
    width: float = 0.15

    def distance(self, x, y) -> np.ndarray:
        return _segment_distance(np.asarray(x), np.asarray(y), self.start, self.end)


def _segment_distance(x: np.ndarray, y: np.ndarray, p0: Point2, p1: Point2) -> np.ndarray:
    ex, ey = p1[0] - p0[0], p1[1] - p0[1]
    length2 = ex * ex + ey * ey
    wx, wy = x - p0[0], y - p0[1]
    s = np.clip((wx * ex + wy * ey) / length2, 0.0, 1.0) if length2 > 0 else np.zeros_like(wx)
    return np.hypot(wx - s * ex, wy - s * ey)


def _inside_polygon(x: np.ndarray, y: np.ndarray, polygon: Sequence[Point2]) -> np.ndarray:
    """Even-odd rule point-in-polygon test."""
    inside = np.zeros(np.shape(x), dtype=bool)
    count = len(polygon)
    for i in range(count):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % count]
        crosses = (y1 > y) != (y2 > y)
        if y2 == y1:
            continue
        x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < x_cross)
    return inside


@dataclass(frozen=True)
class SceneParams:
    """
    Scene content. Explicit ``vehicles``/``walls`` replace random placement.

    Attributes:
        roads: Street polygons (vertex lists, meters)
        markings: Lane-marking stripes
        num_vehicles: Randomly placed vehicles
        vehicle_length: (min, max) length
        vehicle_width: (min, max) width
        num_walls: Randomly placed occluder walls
        wall_length: (min, max) length
        wall_height: (min, max) height
        ego_clearance: Keep-out radius around the ego origin
        max_retries: Placement attempts per object
    """

    roads: Tuple[Tuple[Point2, ...], ...] = ()
    markings: Tuple[Marking, ...] = ()
    num_vehicles: int = 0
    vehicle_length: Tuple[float, float] = (3.8, 4.8)
    vehicle_width: Tuple[float, float] = (1.7, 2.0)
    num_walls: int = 0
    wall_length: Tuple[float, float] = (3.0, 8.0)
    wall_height: Tuple[float, float] = (1.5, 3.0)
    ego_clearance: float = 3.0
    max_retries: int = 200
    vehicles: Optional[Tuple[Vehicle, ...]] = None
    walls: Optional[Tuple[Wall, ...]] = None

    @classmethod
    def preset(cls, name: str, spec: GridSpec) -> 'SceneParams':
        """
        Difficulty presets over the given extent.

        empty: straight road with lane lines, nothing on it
        easy: straight road with lane lines and a few vehicles
        medium: crossing roads, more vehicles, one wall
        hard: crossing roads, dense traffic, several walls
        """
        presets = {'empty': (False, 0, 0), 'easy': (False, 2, 0), 'medium': (True, 4, 1), 'hard': (True, 8, 3)}
        if name not in presets:
            raise ConfigError(f"Unknown scene preset '{name}'. Expected one of: {', '.join(presets)}")
        cross, vehicles, walls = presets[name]
        half_width = 3.5
        roads = [_band('x', spec, half_width)]
        markings = [_lane_line('x', spec, offset) for offset in (-half_width / 2, 0.0, half_width / 2)]
        if cross:
            roads.append(_band('y', spec, half_width))
            markings += [_lane_line('y', spec, offset) for offset in (-half_width / 2, half_width / 2)]
        return cls(roads=tuple(roads), markings=tuple(markings), num_vehicles=vehicles, num_walls=walls)


def snap_to_cell_center(value: float, origin: float, cell: float) -> float:
    return origin + (math.floor((value - origin) / cell) + 0.5) * cell


def _band(axis: str, spec: GridSpec, half_width: float) -> Tuple[Point2, ...]:
    if axis == 'x':
        return ((spec.x_min, -half_width), (spec.x_max, -half_width), (spec.x_max, half_width), (spec.x_min, half_width))
    return ((-half_width, spec.y_min), (half_width, spec.y_min), (half_width, spec.y_max), (-half_width, spec.y_max))


def _lane_line(axis: str, spec: GridSpec, offset: float) -> Marking:
    # stripes run along cell-center lines so they rasterize to a single row of cells
    if axis == 'x':
        y = snap_to_cell_center(offset, spec.y_min, spec.cell)
        return Marking((spec.x_min, y), (spec.x_max, y))
    x = snap_to_cell_center(offset, spec.x_min, spec.cell)
    return Marking((x, spec.y_min), (x, spec.y_max))


@dataclass(eq=False)
class Scene:
    """
    Attributes:
        extent: BEV grid of the labels
        semantic: (nx, ny) class ids including vehicle footprints
        ground: (nx, ny) class ids of the ground surface (no vehicles)
        vehicle_index: (nx, ny) index of the vehicle rasterized to each cell, -1 for none
        vehicles: Vehicle prisms
        occluders: Occluder walls
        seed: Generation seed
    """

    extent: GridSpec
    semantic: np.ndarray
    ground: np.ndarray
    vehicle_index: np.ndarray
    vehicles: Tuple[Vehicle, ...]
    occluders: Tuple[Wall, ...]
    markings: Tuple[Marking, ...]
    seed: int

    def ground_class_at(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        ix, iy, inside = self.extent.cell_index(x, y)
        return np.where(inside, self.ground[ix, iy], BACKGROUND).astype(np.uint8)


@dataclass(eq=False)
class RenderedView:
    """
    Attributes:
        semantic_image: (Hf, Wf) class ids; invalid where nothing is hit
        depth_image: (Hf, Wf) range along the ray (m); +inf where nothing is hit
        surface_image: (Hf, Wf) surface code of the hit
        camera: Rig index
        rays: Ray grid the view was cast with
    """

    semantic_image: np.ndarray
    depth_image: np.ndarray
    surface_image: np.ndarray
    camera: int
    rays: RayGrid


@dataclass(eq=False)
class GroundTruthVisibility:
    visibility: np.ndarray
    occluded: np.ndarray

    @property
    def p_occluded(self) -> np.ndarray:
        return self.occluded.astype(np.float64)


@dataclass(eq=False)
class DepthTargets:
    index: np.ndarray
    hit: np.ndarray
    clamped: np.ndarray


# =============================================================================
# Scene generation
# =============================================================================

def _overlaps(a: Vehicle, b: Vehicle, gap: float = 0.5) -> bool:
    return math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]) < a.radius + b.radius + gap


def _wall_clear_of(wall: Wall, vehicle: Vehicle, gap: float = 0.5) -> bool:
    distance = float(_segment_distance(np.array(vehicle.center[0]), np.array(vehicle.center[1]), wall.start, wall.end))
    return distance > vehicle.radius + gap


def _inside_extent(points: np.ndarray, spec: GridSpec) -> bool:
    return bool(np.all((points[:, 0] >= spec.x_min) & (points[:, 0] < spec.x_max)
                       & (points[:, 1] >= spec.y_min) & (points[:, 1] < spec.y_max)))


def _place_vehicles(rng: np.random.Generator, spec: GridSpec, params: SceneParams) -> List[Vehicle]:
    placed: List[Vehicle] = []
    for number in range(params.num_vehicles):
        for _ in range(params.max_retries):
            vehicle = Vehicle(
                center=(float(rng.uniform(spec.x_min, spec.x_max)), float(rng.uniform(spec.y_min, spec.y_max))),
                length=float(rng.uniform(*params.vehicle_length)),
                width=float(rng.uniform(*params.vehicle_width)),
                yaw=float(rng.choice([0.0, math.pi / 2]) + rng.normal(0.0, 0.1)),
            )
            if math.hypot(*vehicle.center) < params.ego_clearance + vehicle.radius:
                continue
            if not _inside_extent(vehicle.corners(), spec):
                continue
            if any(_overlaps(vehicle, other) for other in placed):
                continue
            placed.append(vehicle)
            break
        else:
            raise GenerationError(
                f"Could not place vehicle {number + 1} of {params.num_vehicles} "
                f"after {params.max_retries} attempts"
            )
    return placed


def _place_walls(rng: np.random.Generator, spec: GridSpec, params: SceneParams,
                 vehicles: Sequence[Vehicle]) -> List[Wall]:
    placed: List[Wall] = []
    for number in range(params.num_walls):
        for _ in range(params.max_retries):
            cx = float(rng.uniform(spec.x_min, spec.x_max))
            cy = float(rng.uniform(spec.y_min, spec.y_max))
            heading = float(rng.uniform(0.0, math.pi))
            half = float(rng.uniform(*params.wall_length)) / 2
            dx, dy = half * math.cos(heading), half * math.sin(heading)
            wall = Wall((cx - dx, cy - dy), (cx + dx, cy + dy), float(rng.uniform(*params.wall_height)))
            ends = np.array([wall.start, wall.end])
            if not _inside_extent(ends, spec):
                continue
            if float(_segment_distance(np.array(0.0), np.array(0.0), wall.start, wall.end)) < params.ego_clearance:
                continue
            if not all(_wall_clear_of(wall, vehicle) for vehicle in vehicles):
                continue
            placed.append(wall)
            break
        else:
            raise GenerationError(
                f"Could not place wall {number + 1} of {params.num_walls} after {params.max_retries} attempts"
            )
    return placed


def make_scene(spec: GridSpec, seed: int, params: SceneParams) -> Scene:
    """
    Build a deterministic scene.

    Street fills the road polygons, markings are thin stripes, background is
    everywhere else; vehicle footprints rasterize (by cell center) to the
    vehicles class.

    Raises:
        GenerationError: random placement failed within the retry budget
    """
    rng = np.random.default_rng(seed)
    xs, ys = spec.cell_centers()

    ground = np.full(spec.shape, BACKGROUND, dtype=np.uint8)
    for polygon in params.roads:
        ground[_inside_polygon(xs, ys, polygon)] = STREET
    for marking in params.markings:
        ground[marking.distance(xs, ys) <= marking.width / 2] = MARKINGS

    vehicles = list(params.vehicles) if params.vehicles is not None else _place_vehicles(rng, spec, params)
    walls = list(params.walls) if params.walls is not None else _place_walls(rng, spec, params, vehicles)

    semantic = ground.copy()
    vehicle_index = np.full(spec.shape, -1, dtype=np.int64)
    for number, vehicle in enumerate(vehicles):
        footprint = vehicle.contains(xs, ys)
        semantic[footprint] = VEHICLES
        vehicle_index[footprint] = number

    logger.debug(f"Scene seed={seed}: {len(vehicles)} vehicle(s), {len(walls)} wall(s)")
    return Scene(
        extent=spec,
        semantic=semantic,
        ground=ground,
        vehicle_index=vehicle_index,
        vehicles=tuple(vehicles),
        occluders=tuple(walls),
        markings=tuple(params.markings),
        seed=seed,
    )


# =============================================================================
# Ray casting
# =============================================================================

def _intersect_ground(origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    dz = dirs[..., 2]
    with np.errstate(divide='ignore', invalid='ignore'):
        t = -origin[..., 2] / dz
    return np.where((dz < 0) & (t > 0), t, np.inf)


def _intersect_prism(origin: np.ndarray, dirs: np.ndarray, vehicle: Vehicle) -> np.ndarray:
    """Slab test in the vehicle's local frame; returns the entry distance or inf."""
    c, s = math.cos(vehicle.yaw), math.sin(vehicle.yaw)
    ox = origin[..., 0] - vehicle.center[0]
    oy = origin[..., 1] - vehicle.center[1]
    local_o = (c * ox + s * oy, -s * ox + c * oy, origin[..., 2])
    local_d = (c * dirs[..., 0] + s * dirs[..., 1], -s * dirs[..., 0] + c * dirs[..., 1], dirs[..., 2])
    bounds = ((-vehicle.length / 2, vehicle.length / 2), (-vehicle.width / 2, vehicle.width / 2), (0.0, vehicle.height))

    t_near = np.full(dirs.shape[:-1], -np.inf)
    t_far = np.full(dirs.shape[:-1], np.inf)
    with np.errstate(divide='ignore', invalid='ignore'):
        for o, d, (lo, hi) in zip(local_o, local_d, bounds):
            t1 = (lo - o) / d
            t2 = (hi - o) / d
            parallel = d == 0
            outside = parallel & ((o < lo) | (o > hi))
            t_lo = np.where(parallel, -np.inf, np.minimum(t1, t2))
            t_hi = np.where(parallel, np.inf, np.maximum(t1, t2))
            t_lo = np.where(outside, np.inf, t_lo)
            t_near = np.maximum(t_near, t_lo)
            t_far = np.minimum(t_far, t_hi)
    return np.where((t_near <= t_far) & (t_near > 0), t_near, np.inf)


def _intersect_wall(origin: np.ndarray, dirs: np.ndarray, wall: Wall) -> np.ndarray:
    ex, ey = wall.end[0] - wall.start[0], wall.end[1] - wall.start[1]
    wx = wall.start[0] - origin[..., 0]
    wy = wall.start[1] - origin[..., 1]
    denom = dirs[..., 0] * ey - dirs[..., 1] * ex
    with np.errstate(divide='ignore', invalid='ignore'):
        t = (wx * ey - wy * ex) / denom
        s = (wx * dirs[..., 1] - wy * dirs[..., 0]) / denom
    z = origin[..., 2] + t * dirs[..., 2]
    hit = (denom != 0) & (t > 0) & (s >= 0) & (s <= 1) & (z >= 0) & (z <= wall.height)
    return np.where(hit, t, np.inf)


def cast(scene: Scene, origin: np.ndarray, dirs: np.ndarray,
         skip_vehicle: Optional[np.ndarray] = None, ground: bool = True) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Nearest hit along each ray.

    Args:
        origin: (3,) or (..., 3) ray origins (vehicle frame)
        dirs: (..., 3) ray directions; distances are in units of |dir|
        skip_vehicle: (...) index of a vehicle to ignore per ray (-1 for none)
        ground: Whether the ground plane z=0 is a surface

    Returns:
        (t, surface code, object index) of the nearest hit; t = inf on a miss
    """
    origin = np.broadcast_to(np.asarray(origin, dtype=np.float64), dirs.shape)
    t_best = _intersect_ground(origin, dirs) if ground else np.full(dirs.shape[:-1], np.inf)
    surface = np.where(np.isfinite(t_best), SURFACE_GROUND, SURFACE_NONE).astype(np.uint8)
    index = np.full(dirs.shape[:-1], -1, dtype=np.int64)

    for number, vehicle in enumerate(scene.vehicles):
        t = _intersect_prism(origin, dirs, vehicle)
        if skip_vehicle is not None:
            t = np.where(skip_vehicle == number, np.inf, t)
        closer = t < t_best
        t_best = np.where(closer, t, t_best)
        surface = np.where(closer, SURFACE_VEHICLE, surface)
        index = np.where(closer, number, index)

    for number, wall in enumerate(scene.occluders):
        t = _intersect_wall(origin, dirs, wall)
        closer = t < t_best
        t_best = np.where(closer, t, t_best)
        surface = np.where(closer, SURFACE_WALL, surface)
        index = np.where(closer, number, index)
    return t_best, surface, index


def _check_above_ground(rig: CameraRig) -> None:
    for camera in rig:
        if camera.extrinsics.translation[2] <= 0:
            raise ConfigError(
                f"Camera '{camera.name}' is at z={camera.extrinsics.translation[2]} m; cameras must be above the ground"
            )


def render_view(scene: Scene, camera: Camera, camera_id: int, rays: RayGrid) -> RenderedView:
    extr = camera.extrinsics
    dirs = rays.dirs @ extr.rotation.T
    t, surface, _ = cast(scene, extr.translation, dirs)
    t = np.where(rays.valid, t, np.inf)
    surface = np.where(rays.valid, surface, SURFACE_NONE).astype(np.uint8)

    semantic = np.full(rays.shape, INVALID, dtype=np.uint8)
    on_ground = surface == SURFACE_GROUND
    points = extr.translation + dirs[on_ground] * t[on_ground][:, None]
    semantic[on_ground] = scene.ground_class_at(points[:, 0], points[:, 1])
    semantic[surface == SURFACE_VEHICLE] = VEHICLES
    semantic[surface == SURFACE_WALL] = BACKGROUND

    return RenderedView(semantic_image=semantic, depth_image=t, surface_image=surface, camera=camera_id, rays=rays)


def render_views(scene: Scene, rig: CameraRig, stride: Tuple[int, int] = (1, 1)) -> List[RenderedView]:
    """
    Ray-cast every camera of the rig.

    Each feature cell casts the ray of its source-pixel center through the
    extrinsics and keeps the nearest of ground plane, vehicle prisms and walls.

    Args:
        scene: Scene to render
        rig: Cameras
        stride: (sy, sx) source pixels per rendered cell

    Raises:
        ConfigError: camera at or below the ground, or non-integer stride
    """
    _check_above_ground(rig)
    views = []
    for number, camera in enumerate(rig):
        intr = camera.intrinsics
        rays = build_ray_grid(intr, (intr.height // stride[0], intr.width // stride[1]))
        views.append(render_view(scene, camera, number, rays))
    return views


# =============================================================================
# Ground truth
# =============================================================================

def _sub_points(spec: GridSpec, samples: int) -> Tuple[np.ndarray, np.ndarray]:
    offsets = (np.arange(samples) + 0.5) / samples
    ix = np.arange(spec.nx)[:, None, None, None]
    iy = np.arange(spec.ny)[None, :, None, None]
    a = offsets[None, None, :, None]
    b = offsets[None, None, None, :]
    x = spec.x_min + (ix + a) * spec.cell
    y = spec.y_min + (iy + b) * spec.cell
    shape = (spec.nx, spec.ny, samples, samples)
    return np.broadcast_to(x, shape), np.broadcast_to(y, shape)


def gt_occlusion(scene: Scene, rig: CameraRig, samples: Optional[int] = None) -> GroundTruthVisibility:
    """
    Ground-truth visibility of every cell.

    Each cell is sampled on a samples x samples sub-grid. A sub-point is seen
    by a camera when it projects inside theta_max and inside the image and the
    segment from the camera to it crosses no vehicle prism or wall. Sub-points
    on a vehicle footprint are taken at half the prism height and ignore their
    own prism. If any sub-point of a vehicle is seen, its whole footprint is
    marked fully visible.

    Returns:
        GroundTruthVisibility with visibility in [0, 1] and occluded = visibility < 0.5
    """
    samples = config.VISIBILITY_SUBSAMPLES if samples is None else samples
    if samples < 1:
        raise ConfigError(f"samples must be >= 1, got {samples}")
    _check_above_ground(rig)
    spec = scene.extent
    x, y = _sub_points(spec, samples)
    x, y = x.ravel(), y.ravel()
    z = np.zeros_like(x)
    owner = np.full(x.shape, -1, dtype=np.int64)
    for number, vehicle in enumerate(scene.vehicles):
        inside = vehicle.contains(x, y)
        owner[inside] = number
        z[inside] = vehicle.height / 2
    points = np.stack([x, y, z], axis=-1)

    seen = np.zeros(x.shape, dtype=bool)
    for camera in rig:
        intr, extr = camera.intrinsics, camera.extrinsics
        uv, valid = rays_to_pixels(intr, extr.to_camera(points))
        candidate = valid & (uv[:, 0] >= 0) & (uv[:, 0] < intr.width) & (uv[:, 1] >= 0) & (uv[:, 1] < intr.height)
        candidate &= ~seen
        idx = np.flatnonzero(candidate)
        if idx.size == 0:
            continue
        segment = points[idx] - extr.translation
        t, _, _ = cast(scene, extr.translation, segment, skip_vehicle=owner[idx], ground=False)
        seen[idx[t >= 1.0 - 1e-9]] = True

    seen_grid = seen.reshape(spec.nx, spec.ny, samples * samples)
    visibility = seen_grid.mean(axis=2)

    owner_grid = owner.reshape(spec.nx, spec.ny, samples * samples)
    for number in range(len(scene.vehicles)):
        if np.any(seen_grid & (owner_grid == number)):
            visibility[scene.vehicle_index == number] = 1.0

    return GroundTruthVisibility(visibility=visibility, occluded=visibility < 0.5)


def gt_depth_bins(view: RenderedView, bins: DepthBins) -> DepthTargets:
    """Bin index of every rendered depth; misses are not hits, out-of-range hits are clamped."""
    hit = np.isfinite(view.depth_image)
    index, clamped = bins.index_of(view.depth_image)
    return DepthTargets(index=np.where(hit, index, 0), hit=hit, clamped=clamped & hit)


def gt_depth_distribution(view: RenderedView, bins: DepthBins) -> Tuple[np.ndarray, np.ndarray]:
    """
    One-hot depth distribution at the bin containing the true depth.

    Returns:
        (dist, clamped): (Hf, Wf, D) one-hot rows (all zero on misses) and the
        mask of hits whose depth was clamped into the first or last bin
    """
    targets = gt_depth_bins(view, bins)
    return one_hot_depth(targets.index, targets.hit, bins), targets.clamped


# =============================================================================
# Rigs
# =============================================================================

DEFAULT_POLY = (110.0, -3.0, 1.5, -0.3)


def default_rig(
    width: Optional[int] = None,
    height: Optional[int] = None,
    mount_height: float = 1.0,
    pitch: float = 0.35,
    coeffs: Sequence[float] = DEFAULT_POLY,
    theta_max: Optional[float] = None,
) -> CameraRig:
    """
    Four-camera surround rig (front, left, rear, right) of polynomial fisheyes.
    """
    width = config.IMAGE_WIDTH if width is None else width
    height = config.IMAGE_HEIGHT if height is None else height
    model = DistortionModel(ModelKind.POLYNOMIAL, f=coeffs[0], coeffs=tuple(coeffs), theta_max=theta_max)
    intr = CameraIntrinsics(model, cx=width / 2, cy=height / 2, width=width, height=height)
    mounts = (
        ('front', 0.0, (1.0, 0.0)),
        ('left', math.pi / 2, (0.0, 0.5)),
        ('rear', math.pi, (-1.0, 0.0)),
        ('right', -math.pi / 2, (0.0, -0.5)),
    )
    cameras = [
        Camera(name, intr, CameraExtrinsics(look_rotation(yaw, pitch), (x, y, mount_height)))
        for name, yaw, (x, y) in mounts
    ]
    return CameraRig(tuple(cameras))


def with_vehicles(params: SceneParams, vehicles: Sequence[Vehicle], walls: Sequence[Wall] = ()) -> SceneParams:
    return replace(params, vehicles=tuple(vehicles), walls=tuple(walls))
