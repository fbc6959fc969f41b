"""
Camera geometry service.

Implements the six radial projection models (Polynomial, UCM, eUCM,
Rectilinear, Stereographic, Double Sphere), forward projection (ray -> pixel),
inverse unprojection (pixel -> ray) and the cylindrical-rectification baseline.

Frames:
- camera: x right, y down, z along the optical axis
- vehicle: x forward, y left, z up (meters)

Pixel (i, j) covers [j, j+1) x [i, i+1); its center is (j + 0.5, i + 0.5).
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from fisheye_bev.utils import config
from fisheye_bev.utils.errors import (
    ConfigError,
    DomainError,
    NumericError,
    OutOfFovError,
    OutOfImageError,
    ShapeError,
)
from fisheye_bev.utils.logger import setup_logger

logger = setup_logger(__name__)

ArrayLike = Union[float, np.ndarray]

MONOTONIC_SAMPLES = 4096
ROUND_TRIP_SAMPLES = 512
ORTHONORMAL_TOLERANCE = 1e-9


class ModelKind(str, Enum):
    """Radial distortion model families."""

    POLYNOMIAL = 'polynomial'
    UCM = 'ucm'
    EUCM = 'eucm'
    RECTILINEAR = 'rectilinear'
    STEREOGRAPHIC = 'stereographic'
    DOUBLE_SPHERE = 'double_sphere'

    @classmethod
    def parse(cls, value: Union[str, 'ModelKind']) -> 'ModelKind':
        if isinstance(value, ModelKind):
            return value
        key = str(value).strip().lower().replace('-', '_').replace(' ', '_')
        aliases = {
            'poly': cls.POLYNOMIAL,
            'kannala_brandt': cls.POLYNOMIAL,
            'pinhole': cls.RECTILINEAR,
            'ds': cls.DOUBLE_SPHERE,
            'doublesphere': cls.DOUBLE_SPHERE,
        }
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            known = ', '.join(kind.value for kind in cls)
            raise ConfigError(f"Unknown camera model '{value}'. Expected one of: {known}")


COEFF_NAMES = {
    ModelKind.POLYNOMIAL: ('a1', 'a2', 'a3', 'a4'),
    ModelKind.UCM: ('xi',),
    ModelKind.EUCM: ('alpha', 'beta'),
    ModelKind.RECTILINEAR: (),
    ModelKind.STEREOGRAPHIC: (),
    ModelKind.DOUBLE_SPHERE: ('xi', 'alpha'),
}

FISHEYE_THETA_MAX = 1.9


def default_theta_max(kind: ModelKind) -> float:
    """pi/2 for Rectilinear (tan diverges there), 1.9 rad for the wide-angle kinds."""
    return math.pi / 2 if kind == ModelKind.RECTILINEAR else FISHEYE_THETA_MAX


# =============================================================================
# Closed forms r(theta) and dr/dtheta
# =============================================================================

def _radius(kind: ModelKind, f: float, coeffs: Tuple[float, ...], theta: np.ndarray) -> np.ndarray:
    if kind == ModelKind.POLYNOMIAL:
        a1, a2, a3, a4 = coeffs
        return theta * (a1 + theta * (a2 + theta * (a3 + theta * a4)))
    if kind == ModelKind.RECTILINEAR:
        return f * np.tan(theta)
    if kind == ModelKind.STEREOGRAPHIC:
        return 2.0 * f * np.tan(theta / 2.0)

    s, c = np.sin(theta), np.cos(theta)
    if kind == ModelKind.UCM:
        (xi,) = coeffs
        return f * s / (c + xi)
    if kind == ModelKind.EUCM:
        alpha, beta = coeffs
        q = np.sqrt(beta * s * s + c * c)
        return f * s / (c + alpha * (q - c))
    # Double Sphere
    xi, alpha = coeffs
    d1 = np.sqrt(s * s + (xi + c) ** 2)
    return f * s / (alpha * d1 + (1.0 - alpha) * (xi + c))


def _radius_derivative(kind: ModelKind, f: float, coeffs: Tuple[float, ...], theta: np.ndarray) -> np.ndarray:
    if kind == ModelKind.POLYNOMIAL:
        a1, a2, a3, a4 = coeffs
        return a1 + theta * (2.0 * a2 + theta * (3.0 * a3 + theta * 4.0 * a4))
    if kind == ModelKind.RECTILINEAR:
        return f / np.cos(theta) ** 2
    if kind == ModelKind.STEREOGRAPHIC:
        return f / np.cos(theta / 2.0) ** 2

    s, c = np.sin(theta), np.cos(theta)
    if kind == ModelKind.UCM:
        (xi,) = coeffs
        return f * (1.0 + xi * c) / (c + xi) ** 2
    if kind == ModelKind.EUCM:
        alpha, beta = coeffs
        q = np.sqrt(beta * s * s + c * c)
        den = c + alpha * (q - c)
        dden = -s + alpha * (s * c * (beta - 1.0) / q + s)
    else:
        xi, alpha = coeffs
        d1 = np.sqrt(s * s + (xi + c) ** 2)
        den = alpha * d1 + (1.0 - alpha) * (xi + c)
        dden = -alpha * xi * s / d1 - (1.0 - alpha) * s
    # quotient rule on f * s / den
    return f * (c * den - s * dden) / den ** 2


# =============================================================================
# Domain types
# =============================================================================

@dataclass(frozen=True)
class DistortionModel:
    """
    Radial distortion model mapping incidence angle theta to image radius r.

    Attributes:
        kind: Model family
        f: Focal length in pixels (unused by Polynomial, whose a1..a4 are in pixels)
        coeffs: Model parameters - Polynomial (a1..a4), UCM (xi,), eUCM (alpha, beta),
            Double Sphere (xi, alpha); empty for Rectilinear/Stereographic
        inverse_poly: Optional p1..p9 of the direct inverse theta(r) (r in pixels)
        theta_max: Largest valid incidence angle; the valid range is [0, theta_max)
        poly_tolerance: Pixel tolerance for the p1..p9 consistency check
    """

    kind: ModelKind
    f: float
    coeffs: Tuple[float, ...] = ()
    inverse_poly: Optional[Tuple[float, ...]] = None
    theta_max: Optional[float] = None
    poly_tolerance: float = field(default_factory=lambda: config.INVERSE_POLY_TOLERANCE, compare=False)

    def __post_init__(self):
        kind = ModelKind.parse(self.kind)
        object.__setattr__(self, 'kind', kind)
        object.__setattr__(self, 'f', float(self.f))
        object.__setattr__(self, 'coeffs', tuple(float(c) for c in self.coeffs))
        if self.theta_max is None:
            object.__setattr__(self, 'theta_max', default_theta_max(kind))
        object.__setattr__(self, 'theta_max', float(self.theta_max))
        if self.inverse_poly is not None:
            object.__setattr__(self, 'inverse_poly', tuple(float(p) for p in self.inverse_poly))

        self._validate_parameters()
        self._check_monotonic()
        if self.inverse_poly is not None:
            self._check_inverse_poly()

    # ------------------------------------------------------------------ checks

    def _validate_parameters(self) -> None:
        if not (math.isfinite(self.f) and self.f > 0):
            raise ConfigError(f"Focal length must be > 0, got f={self.f}")
        if not (0.0 < self.theta_max <= math.pi):
            raise ConfigError(f"theta_max must lie in (0, pi], got {self.theta_max}")
        expected = COEFF_NAMES[self.kind]
        if len(self.coeffs) != len(expected):
            raise ConfigError(
                f"{self.kind.value} model takes {len(expected)} coefficient(s) "
                f"{list(expected)}, got {len(self.coeffs)}"
            )
        if not all(math.isfinite(c) for c in self.coeffs):
            raise ConfigError(f"{self.kind.value} coefficients must be finite, got {self.coeffs}")
        if self.inverse_poly is not None:
            if not 1 <= len(self.inverse_poly) <= 9:
                raise ConfigError(f"inverse_poly takes 1 to 9 coefficients (p1..p9), got {len(self.inverse_poly)}")
            if not all(math.isfinite(p) for p in self.inverse_poly):
                raise ConfigError("inverse_poly coefficients must be finite")

    def _check_monotonic(self) -> None:
        theta = np.linspace(0.0, self.theta_max, MONOTONIC_SAMPLES, endpoint=False)
        with np.errstate(divide='ignore', invalid='ignore'):
            r = self.radius(theta)
        if not np.all(np.isfinite(r)):
            bad = theta[~np.isfinite(r)][0]
            raise ConfigError(
                f"{self.kind.value} model is not finite at theta={bad:.6f} < theta_max={self.theta_max}"
            )
        steps = np.diff(r)
        if not np.all(steps > 0):
            bad = theta[1:][steps <= 0][0]
            raise ConfigError(
                f"{self.kind.value} model r(theta) is not strictly increasing near theta={bad:.6f} "
                f"(theta_max={self.theta_max})"
            )

    def _check_inverse_poly(self) -> None:
        theta = np.linspace(0.0, 0.95 * self.theta_max, ROUND_TRIP_SAMPLES)
        r = self.radius(theta)
        theta_back = np.clip(self._poly_theta(r), 0.0, self.theta_max * (1.0 - config.INVERSE_MARGIN))
        error = np.max(np.abs(self.radius(theta_back) - r))
        if not error <= self.poly_tolerance:
            raise ConfigError(
                f"inverse_poly is inconsistent with the {self.kind.value} forward model: "
                f"round-trip error {error:.4g} px exceeds tolerance {self.poly_tolerance} px"
            )

    # ---------------------------------------------------------------- formulas

    def radius(self, theta: ArrayLike) -> np.ndarray:
        """Evaluate r(theta) without range checks (vectorized)."""
        return _radius(self.kind, self.f, self.coeffs, np.asarray(theta, dtype=np.float64))

    def radius_derivative(self, theta: ArrayLike) -> np.ndarray:
        return _radius_derivative(self.kind, self.f, self.coeffs, np.asarray(theta, dtype=np.float64))

    def _poly_theta(self, r: np.ndarray) -> np.ndarray:
        # theta = p1 r + p2 r^2 + ... + p9 r^9
        return np.polynomial.polynomial.polyval(r, (0.0,) + self.inverse_poly)

    @property
    def r_max(self) -> float:
        """Largest radius accepted by the inverse: r(theta_max * (1 - margin))."""
        return float(self.radius(self.theta_max * (1.0 - config.INVERSE_MARGIN)))

    def with_inverse_poly(self, inverse_poly: Sequence[float]) -> 'DistortionModel':
        return DistortionModel(
            kind=self.kind, f=self.f, coeffs=self.coeffs,
            inverse_poly=tuple(inverse_poly), theta_max=self.theta_max,
            poly_tolerance=self.poly_tolerance,
        )


@dataclass(frozen=True)
class CameraIntrinsics:
    """Distortion model plus principal point and image size (pixels)."""

    model: DistortionModel
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, 'cx', float(self.cx))
        object.__setattr__(self, 'cy', float(self.cy))
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ConfigError(f"Image size must be integral, got {self.width}x{self.height}")
        object.__setattr__(self, 'width', int(self.width))
        object.__setattr__(self, 'height', int(self.height))
        if self.width < 1 or self.height < 1:
            raise ConfigError(f"Image size must be at least 1x1, got {self.width}x{self.height}")
        if not (0.0 <= self.cx < self.width and 0.0 <= self.cy < self.height):
            raise ConfigError(
                f"Principal point ({self.cx}, {self.cy}) must lie inside the "
                f"{self.width}x{self.height} image"
            )

    def normalized_vector(self) -> np.ndarray:
        """
        Intrinsic parameters in a scale-free vector for intrinsic-conditioned pooling.

        Layout: (f/width, cx/width, cy/height, c1, c2, c3, c4, 1). Polynomial
        coefficients are pixel-valued and are divided by the width; missing
        coefficients are zero-padded. The trailing 1 is the bias input.
        """
        model = self.model
        coeffs = list(model.coeffs)
        if model.kind == ModelKind.POLYNOMIAL:
            coeffs = [c / self.width for c in coeffs]
        coeffs += [0.0] * (4 - len(coeffs))
        return np.array(
            [model.f / self.width, self.cx / self.width, self.cy / self.height, *coeffs, 1.0],
            dtype=np.float64,
        )


INTRINSIC_VECTOR_SIZE = 8


@dataclass(frozen=True, eq=False)
class CameraExtrinsics:
    """Rigid camera -> vehicle transform: p_vehicle = rotation @ p_camera + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=np.float64)
        translation = np.array(self.translation, dtype=np.float64)
        if rotation.size == 9:
            rotation = rotation.reshape(3, 3)
        if rotation.shape != (3, 3):
            raise ShapeError(f"rotation must be 3x3 (or 9 row-major numbers), got shape {rotation.shape}")
        if translation.shape != (3,):
            raise ShapeError(f"translation must have 3 entries, got shape {translation.shape}")
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise ConfigError("Extrinsics must be finite")
        gram_error = np.max(np.abs(rotation.T @ rotation - np.eye(3)))
        if gram_error > ORTHONORMAL_TOLERANCE:
            raise ConfigError(f"rotation is not orthonormal (max |R^T R - I| = {gram_error:.3g})")
        det = np.linalg.det(rotation)
        if abs(det - 1.0) > ORTHONORMAL_TOLERANCE:
            raise ConfigError(f"rotation must be proper (det = +1), got det = {det:.12f}")
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, 'rotation', rotation)
        object.__setattr__(self, 'translation', translation)

    def to_vehicle(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.translation) @ self.rotation

    def translated(self, offset: Sequence[float]) -> 'CameraExtrinsics':
        return CameraExtrinsics(self.rotation, self.translation + np.asarray(offset, dtype=np.float64))


@dataclass(frozen=True)
class Camera:
    name: str
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics


@dataclass(frozen=True)
class CameraRig:
    """Ordered collection of cameras; the position in the rig is the camera id."""

    cameras: Tuple[Camera, ...]

    def __post_init__(self):
        object.__setattr__(self, 'cameras', tuple(self.cameras))
        names = [camera.name for camera in self.cameras]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise ConfigError(f"Duplicate camera names in rig: {', '.join(duplicates)}")

    def __len__(self) -> int:
        return len(self.cameras)

    def __iter__(self) -> Iterator[Camera]:
        return iter(self.cameras)

    def __getitem__(self, index: int) -> Camera:
        return self.cameras[index]

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(camera.name for camera in self.cameras)


def look_rotation(yaw: float, pitch: float = 0.0) -> np.ndarray:
    """
    Camera -> vehicle rotation for an optical axis at the given yaw and pitch.

    Args:
        yaw: Heading of the optical axis, radians, counter-clockwise from vehicle x
        pitch: Downward tilt of the optical axis, radians

    Returns:
        3x3 rotation whose columns are the camera x (right), y (down) and z (forward)
        axes expressed in the vehicle frame.
    """
    forward = np.array([
        math.cos(pitch) * math.cos(yaw),
        math.cos(pitch) * math.sin(yaw),
        -math.sin(pitch),
    ])
    right = np.array([math.sin(yaw), -math.cos(yaw), 0.0])
    down = np.cross(forward, right)
    return np.column_stack([right, down, forward])


# =============================================================================
# Operations: forward / inverse radial mapping
# =============================================================================

def _as_output(values: np.ndarray, scalar: bool) -> ArrayLike:
    return float(values) if scalar else values


def forward_distort(model: DistortionModel, theta: ArrayLike) -> ArrayLike:
    """
    Map incidence angle(s) to image radius via the model's closed form.

    Raises:
        DomainError: if any theta lies outside [0, theta_max)
    """
    scalar = np.ndim(theta) == 0
    theta = np.asarray(theta, dtype=np.float64)
    bad = ~((theta >= 0.0) & (theta < model.theta_max))
    if np.any(bad):
        value = theta[bad].flat[0] if theta.ndim else float(theta)
        raise DomainError(
            f"theta={value} is outside the valid range [0, theta_max={model.theta_max}) "
            f"of the {model.kind.value} model"
        )
    return _as_output(model.radius(theta), scalar)


def _newton_inverse(model: DistortionModel, r: np.ndarray, max_iter: int) -> np.ndarray:
    """Safeguarded Newton on r(theta) = r with a shrinking bisection bracket."""
    target = r.ravel().copy()
    theta = np.zeros_like(target)
    lo = np.zeros_like(target)
    hi = np.full_like(target, model.theta_max)
    tol = 1e-10 * np.maximum(1.0, target)

    slope0 = float(model.radius_derivative(0.0))
    with np.errstate(divide='ignore', invalid='ignore'):
        guess = target / slope0
    theta[:] = np.where((guess >= 0.0) & (guess < hi), guess, 0.5 * (lo + hi))

    active = np.arange(target.size)
    residual = np.zeros_like(target)
    for _ in range(max_iter):
        if active.size == 0:
            break
        th = theta[active]
        res = model.radius(th) - target[active]
        residual[active] = res
        converged = np.abs(res) <= tol[active]
        # the bracket may collapse below float resolution before the residual tolerance is met
        collapsed = (hi[active] - lo[active]) <= 4.0 * np.spacing(np.maximum(th, 1.0))
        done = converged | collapsed

        lo_a = np.where(res < 0.0, th, lo[active])
        hi_a = np.where(res > 0.0, th, hi[active])
        with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
            newton = th - res / model.radius_derivative(th)
        inside = np.isfinite(newton) & (newton > lo_a) & (newton < hi_a)
        step = np.where(inside, newton, 0.5 * (lo_a + hi_a))

        theta[active] = np.where(done, th, step)
        lo[active] = lo_a
        hi[active] = hi_a
        active = active[~done]

    if active.size:
        worst = float(np.max(np.abs(residual[active])))
        raise NumericError(
            f"Newton inversion of the {model.kind.value} model did not converge for "
            f"{active.size} radius value(s) after {max_iter} iterations "
            f"(max residual {worst:.3e} px)",
            residual=worst,
        )
    return theta.reshape(r.shape)


def inverse_distort(model: DistortionModel, r: ArrayLike, max_iter: Optional[int] = None) -> ArrayLike:
    """
    Map image radius back to incidence angle.

    Uses the direct p1..p9 polynomial when the model carries one;
    otherwise solves forward_distort(theta) = r by safeguarded Newton iteration
    with a bisection fallback to |r(theta) - r| <= 1e-10 * max(1, r).

    Raises:
        DomainError: negative radius
        OutOfImageError: radius beyond r(theta_max * (1 - margin))
        NumericError: Newton failed to converge within max_iter
    """
    scalar = np.ndim(r) == 0
    r = np.asarray(r, dtype=np.float64)
    if np.any(~(r >= 0.0)):
        raise DomainError(f"Radius must be >= 0, got {r[~(r >= 0.0)].flat[0] if r.ndim else float(r)}")
    r_max = model.r_max
    if np.any(r > r_max):
        worst = float(np.max(r))
        raise OutOfImageError(
            f"Radius {worst:.6g} px exceeds the {model.kind.value} model's valid image "
            f"(r_max={r_max:.6g} px at theta_max={model.theta_max})"
        )

    if model.inverse_poly is not None:
        theta = np.clip(model._poly_theta(r), 0.0, model.theta_max * (1.0 - config.INVERSE_MARGIN))
    else:
        theta = _newton_inverse(model, r, max_iter or config.NEWTON_MAX_ITER)
    return _as_output(theta, scalar)


def fit_inverse_poly(model: DistortionModel, degree: int = 9, samples: int = 2048) -> Tuple[float, ...]:
    """
    Least-squares fit of p1..p_degree for the model's inverse theta(r).

    The fit runs on [0, 0.95 * theta_max] in radius units normalized by the
    largest sampled radius, then rescales the coefficients back to pixels.
    """
    if not 1 <= degree <= 9:
        raise ConfigError(f"degree must be between 1 and 9, got {degree}")
    theta = np.linspace(0.0, 0.95 * model.theta_max, samples)
    r = model.radius(theta)
    scale = r[-1]
    powers = np.arange(1, degree + 1)
    vandermonde = (r / scale)[:, None] ** powers[None, :]
    solution, *_ = np.linalg.lstsq(vandermonde, theta, rcond=None)
    return tuple(float(c / scale ** p) for c, p in zip(solution, powers))


# =============================================================================
# Operations: pixel <-> ray
# =============================================================================

def pixels_to_rays(intr: CameraIntrinsics, u: ArrayLike, v: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorized unprojection.

    Returns:
        dirs: (..., 3) unit vectors in the camera frame (zeros where invalid)
        valid: (...) mask of pixels inside the theta_max cone
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    x = u - intr.cx
    y = v - intr.cy
    r = np.hypot(x, y)
    phi = np.arctan2(y, x)

    valid = r <= intr.model.r_max
    theta = np.zeros_like(r)
    if np.any(valid):
        theta[valid] = inverse_distort(intr.model, r[valid])

    sin_theta = np.sin(theta)
    dirs = np.stack([np.cos(phi) * sin_theta, np.sin(phi) * sin_theta, np.cos(theta)], axis=-1)
    dirs[~valid] = 0.0
    return dirs, valid


def pixel_to_ray(intr: CameraIntrinsics, u: float, v: float) -> np.ndarray:
    """
    Unit direction (camera frame) of the pixel position (u, v).

    The direction is unit length so
    that multiplying by metric depth in the lift step yields metric points.

    Raises:
        DomainError: (u, v) outside the image
        OutOfFovError: the pixel lies outside the theta_max cone
    """
    if not (0.0 <= u <= intr.width and 0.0 <= v <= intr.height):
        raise DomainError(f"Pixel ({u}, {v}) is outside the {intr.width}x{intr.height} image")
    dirs, valid = pixels_to_rays(intr, u, v)
    if not bool(valid):
        raise OutOfFovError(
            f"Pixel ({u}, {v}) maps beyond theta_max={intr.model.theta_max} "
            f"(radius {math.hypot(u - intr.cx, v - intr.cy):.3f} px > r_max {intr.model.r_max:.3f} px)"
        )
    return dirs


def rays_to_pixels(intr: CameraIntrinsics, dirs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorized projection of camera-frame directions.

    Returns:
        uv: (..., 2) pixel positions (NaN where invalid)
        valid: (...) mask of non-zero directions with theta < theta_max
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    if dirs.shape[-1] != 3:
        raise ShapeError(f"dirs must have shape (..., 3), got {dirs.shape}")
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    rho = np.hypot(x, y)
    # atan2 keeps precision near the optical axis where acos(z/|d|) does not
    theta = np.arctan2(rho, z)
    phi = np.arctan2(y, x)
    valid = ((rho > 0.0) | (z != 0.0)) & (theta < intr.model.theta_max)

    r = np.full(theta.shape, np.nan)
    r[valid] = intr.model.radius(theta[valid])
    uv = np.stack([intr.cx + r * np.cos(phi), intr.cy + r * np.sin(phi)], axis=-1)
    return uv, valid


def ray_to_pixel(intr: CameraIntrinsics, direction: Sequence[float]) -> Optional[Tuple[float, float]]:
    """
    Project a camera-frame direction to a pixel position.

    Returns:
        (u, v), or None when the ray is outside the theta_max cone

    Raises:
        DomainError: zero direction vector
    """
    direction = np.asarray(direction, dtype=np.float64)
    if direction.shape != (3,):
        raise ShapeError(f"direction must be a 3-vector, got shape {direction.shape}")
    if not np.any(direction):
        raise DomainError("Cannot project the zero vector")
    uv, valid = rays_to_pixels(intr, direction)
    if not bool(valid):
        return None
    return float(uv[0]), float(uv[1])


def pixel_centers(width: int, height: int, stride: Tuple[int, int] = (1, 1)) -> Tuple[np.ndarray, np.ndarray]:
    """(u, v) grids of the source-pixel centers of a (height/sy) x (width/sx) cell grid."""
    sy, sx = stride
    cols = (np.arange(width // sx) + 0.5) * sx
    rows = (np.arange(height // sy) + 0.5) * sy
    return np.meshgrid(cols, rows)


# =============================================================================
# Cylindrical rectification baseline
# =============================================================================

@dataclass(frozen=True)
class CylindricalIntrinsics:
    """
    Virtual cylindrical camera: azimuth is linear in the column, the tangent of
    the elevation is linear in the row (vertical lines stay vertical).
    """

    f: float
    cx: float
    cy: float
    width: int
    height: int

    def pixel_rays(self) -> np.ndarray:
        u, v = pixel_centers(self.width, self.height)
        return self.rays(u, v)

    def rays(self, u: ArrayLike, v: ArrayLike) -> np.ndarray:
        azimuth = (np.asarray(u, dtype=np.float64) - self.cx) / self.f
        height = (np.asarray(v, dtype=np.float64) - self.cy) / self.f
        dirs = np.stack([np.sin(azimuth), height, np.cos(azimuth)], axis=-1)
        return dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)

    def project(self, dirs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        dirs = np.asarray(dirs, dtype=np.float64)
        x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
        horizontal = np.hypot(x, z)
        valid = horizontal > 0.0
        with np.errstate(divide='ignore', invalid='ignore'):
            u = self.cx + self.f * np.arctan2(x, z)
            v = self.cy + self.f * y / horizontal
        uv = np.stack([u, v], axis=-1)
        uv[~valid] = np.nan
        return uv, valid


@dataclass
class RectifiedImage:
    image: np.ndarray
    valid: np.ndarray
    intrinsics: CylindricalIntrinsics


def cylindrical_rectify(
    intr: CameraIntrinsics,
    image: np.ndarray,
    out_size: Optional[Tuple[int, int]] = None,
    hfov: Optional[float] = None,
    f: Optional[float] = None,
    fill: float = 0.0,
) -> RectifiedImage:
    """
    Resample a fisheye image onto a virtual cylinder.

    Each output pixel's cylindrical ray is projected through the source model
    and the source is sampled bilinearly. Targets outside the source FOV or
    image are set to ``fill`` and flagged False in the validity mask.

    Args:
        intr: Source camera intrinsics
        image: (H, W) or (H, W, C) samples matching the intrinsics' size
        out_size: (height, width) of the output (default: source size)
        hfov: Horizontal field of view of the output in radians (default: 2 * theta_max,
            capped at 2 pi); ignored when f is given
        f: Cylinder focal length in pixels per radian
        fill: Value for invalid targets

    Returns:
        RectifiedImage with the resampled image, validity mask and virtual intrinsics

    Raises:
        ShapeError: image size does not match the intrinsics
        ConfigError: invalid output size or field of view
    """
    image = np.asarray(image)
    if image.ndim not in (2, 3) or image.shape[:2] != (intr.height, intr.width):
        raise ShapeError(
            f"image must be ({intr.height}, {intr.width}[, C]) to match the intrinsics, got {image.shape}"
        )
    out_h, out_w = out_size if out_size is not None else (intr.height, intr.width)
    if out_h < 1 or out_w < 1 or int(out_h) != out_h or int(out_w) != out_w:
        raise ConfigError(f"Output size must be positive integers, got {out_size}")
    out_h, out_w = int(out_h), int(out_w)
    if f is None:
        if hfov is None:
            hfov = min(2.0 * intr.model.theta_max, 2.0 * math.pi)
        if not (0.0 < hfov <= 2.0 * math.pi):
            raise ConfigError(f"hfov must lie in (0, 2 pi], got {hfov}")
        f = out_w / hfov
    if not (math.isfinite(f) and f > 0):
        raise ConfigError(f"Cylinder focal length must be > 0, got {f}")

    cylinder = CylindricalIntrinsics(f=float(f), cx=out_w / 2.0, cy=out_h / 2.0, width=out_w, height=out_h)
    uv, valid = rays_to_pixels(intr, cylinder.pixel_rays())

    # sample-array coordinates: pixel center (j + 0.5, i + 0.5) sits at index (i, j)
    rows = uv[..., 1] - 0.5
    cols = uv[..., 0] - 0.5
    valid &= (rows >= 0.0) & (rows <= intr.height - 1) & (cols >= 0.0) & (cols <= intr.width - 1)

    channels = image[..., None] if image.ndim == 2 else image
    out = np.full((out_h, out_w, channels.shape[2]), fill, dtype=np.float64)
    if np.any(valid):
        coords = np.vstack([rows[valid], cols[valid]])
        for c in range(channels.shape[2]):
            out[valid, c] = ndimage.map_coordinates(
                channels[..., c].astype(np.float64), coords, order=1, mode='nearest'
            )
    else:
        logger.warning("Cylindrical rectification produced no valid pixel")

    if image.ndim == 2:
        out = out[..., 0]
    return RectifiedImage(image=out, valid=valid, intrinsics=cylinder)
