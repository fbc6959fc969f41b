"""
Unit tests for the image export service.
"""

import numpy as np
import pytest

from fisheye_bev.services.image_export import (
    bev_to_image,
    encode_pgm,
    encode_ppm,
    occlusion_to_gray,
    semantic_to_rgb,
    write_grid_pgm,
    write_occlusion_bev,
    write_semantic_bev,
)
from fisheye_bev.services.metrics import PALETTE, STREET, VEHICLES
from fisheye_bev.utils.errors import DataError, ShapeError


pytestmark = pytest.mark.unit


def split_header(content, lines=3):
    parts = content.split(b"\n", lines)
    return [p.decode('ascii') for p in parts[:lines]], parts[lines]


class TestOrientation:
    def test_forward_up_left_left(self):
        """Test that the cell at max x and max y lands in the top-left pixel."""
        grid = np.zeros((3, 4))
        grid[2, 3] = 1.0
        image = bev_to_image(grid)
        assert image[0, 0] == 1.0


class TestColorMaps:
    """Test class and occlusion color mapping."""

    def test_palette(self):
        rgb = semantic_to_rgb(np.array([[VEHICLES, STREET]]))
        assert tuple(rgb[0, 0]) == PALETTE[VEHICLES]
        assert tuple(rgb[0, 1]) == PALETTE[STREET]
        assert rgb.dtype == np.uint8

    def test_unknown_class_rejected(self):
        with pytest.raises(DataError):
            semantic_to_rgb(np.array([[7]]))

    def test_occlusion_gray_levels(self):
        gray = occlusion_to_gray(np.array([0.0, 0.5, 1.0, 1.5]))
        assert gray.tolist() == [255, 128, 0, 0]


class TestEncoders:
    """Test binary PGM/PPM encoding."""

    def test_pgm(self):
        content = encode_pgm(np.arange(6, dtype=np.uint8).reshape(2, 3))
        header, payload = split_header(content)
        assert header == ["P5", "3 2", "255"]
        assert payload == bytes(range(6))

    def test_ppm(self):
        content = encode_ppm(np.zeros((2, 5, 3), dtype=np.uint8))
        header, payload = split_header(content)
        assert header == ["P6", "5 2", "255"]
        assert len(payload) == 30

    def test_pgm_rank_checked(self):
        with pytest.raises(ShapeError):
            encode_pgm(np.zeros((2, 2, 3)))

    def test_ppm_channels_checked(self):
        with pytest.raises(ShapeError):
            encode_ppm(np.zeros((2, 2, 4)))


class TestWriters:
    """Test BEV renders written to disk."""

    def test_semantic_bev(self, tmp_path):
        classes = np.full((4, 6), STREET)
        path = write_semantic_bev(tmp_path / "semantic.ppm", classes)
        header, payload = split_header(path.read_bytes())
        assert header == ["P6", "6 4", "255"]
        assert payload[:3] == bytes(PALETTE[STREET])

    def test_occlusion_bev(self, tmp_path):
        path = write_occlusion_bev(tmp_path / "occ.pgm", np.zeros((2, 2)))
        _, payload = split_header(path.read_bytes())
        assert payload == bytes([255] * 4)

    def test_constant_grid(self, tmp_path):
        path = write_grid_pgm(tmp_path / "flat.pgm", np.full((3, 3), 7.0))
        _, payload = split_header(path.read_bytes())
        assert payload == bytes(9)

    def test_grid_scaled_to_full_range(self, tmp_path):
        path = write_grid_pgm(tmp_path / "ramp.pgm", np.array([[0.0, 1.0], [2.0, 4.0]]))
        _, payload = split_header(path.read_bytes())
        assert sorted(payload) == [0, 64, 128, 255]
