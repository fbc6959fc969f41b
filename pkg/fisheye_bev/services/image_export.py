"""
Image export service: binary PGM (grayscale) and PPM (RGB) renders of BEV
grids and camera views.

BEV grids are indexed [ix, iy] with x forward and y left; renders put
forward at the top and left on the left.
"""

from pathlib import Path
from typing import Union

import numpy as np

from fisheye_bev.services.metrics import PALETTE
from fisheye_bev.services.tensor_io import atomic_write
from fisheye_bev.utils.errors import DataError, ShapeError

PathLike = Union[str, Path]


def bev_to_image(grid: np.ndarray) -> np.ndarray:
    """Flip a BEV grid so that +x is up and +y is left."""
    return np.asarray(grid)[::-1, ::-1]


def semantic_to_rgb(classes: np.ndarray) -> np.ndarray:
    """(H, W) class ids -> (H, W, 3) uint8 using the fixed five-color palette."""
    classes = np.asarray(classes)
    lut = np.zeros((256, 3), dtype=np.uint8)
    for class_id, color in PALETTE.items():
        lut[class_id] = color
    if classes.size and (classes.min() < 0 or classes.max() >= len(PALETTE)):
        raise DataError(f"Class ids must lie in [0, {len(PALETTE)}) to be rendered")
    return lut[classes.astype(np.int64)]


def occlusion_to_gray(p_occluded: np.ndarray) -> np.ndarray:
    """Occluded cells render black, fully visible cells white."""
    p = np.clip(np.asarray(p_occluded, dtype=np.float64), 0.0, 1.0)
    return np.round(255.0 * (1.0 - p)).astype(np.uint8)


def encode_pgm(gray: np.ndarray) -> bytes:
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise ShapeError(f"PGM needs a 2-D image, got {gray.shape}")
    height, width = gray.shape
    return f"P5\n{width} {height}\n255\n".encode('ascii') + np.ascontiguousarray(gray, dtype=np.uint8).tobytes()


def encode_ppm(rgb: np.ndarray) -> bytes:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeError(f"PPM needs an (H, W, 3) image, got {rgb.shape}")
    height, width, _ = rgb.shape
    return f"P6\n{width} {height}\n255\n".encode('ascii') + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()


def write_pgm(path: PathLike, gray: np.ndarray) -> Path:
    return atomic_write(path, encode_pgm(gray))


def write_ppm(path: PathLike, rgb: np.ndarray) -> Path:
    return atomic_write(path, encode_ppm(rgb))


def write_semantic_bev(path: PathLike, classes: np.ndarray) -> Path:
    return write_ppm(path, semantic_to_rgb(bev_to_image(classes)))


def write_occlusion_bev(path: PathLike, p_occluded: np.ndarray) -> Path:
    return write_pgm(path, occlusion_to_gray(bev_to_image(p_occluded)))


def write_grid_pgm(path: PathLike, values: np.ndarray) -> Path:
    """Min-max scaled grayscale render of a single-channel BEV grid."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    scaled = np.zeros_like(values) if hi <= lo else (values - lo) / (hi - lo)
    return write_pgm(path, np.round(255.0 * bev_to_image(scaled)).astype(np.uint8))
