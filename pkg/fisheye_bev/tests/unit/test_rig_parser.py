"""
Unit Tests for RigParser Service

Tests YAML parsing, line bookkeeping and construction of rig objects.
"""

import math

import numpy as np
import pytest

from fisheye_bev.services.camera import ModelKind
from fisheye_bev.services.rig_parser import RigParser, load_rig, rig_to_yaml
from fisheye_bev.utils.errors import ConfigError


pytestmark = pytest.mark.unit


MINIMAL_RIG = """\
cameras:
  - name: solo
    model: rectilinear
    f: 40.0
    cx: 32.0
    cy: 24.0
    width: 64
    height: 48
    translation: [0.0, 0.0, 1.5]
"""


class TestParseYaml:
    """Test parsing rig text into a document."""

    def test_parse_minimal_rig(self):
        doc = RigParser().parse_yaml(MINIMAL_RIG, "minimal.yaml")
        assert doc.filename == "minimal.yaml"
        assert doc.data['cameras'][0]['name'] == 'solo'

    def test_key_lines_recorded(self):
        doc = RigParser().parse_yaml(MINIMAL_RIG)
        assert doc.line_of('cameras') == 1
        assert doc.line_of('cameras', 0) == 2
        assert doc.line_of('cameras', 0, 'model') == 3
        assert doc.line_of('cameras', 0, 'translation') == 9

    def test_unknown_path_falls_back_to_known_prefix(self):
        doc = RigParser().parse_yaml(MINIMAL_RIG, "minimal.yaml")
        assert doc.where('cameras', 0, 'theta_max') == "minimal.yaml:2"

    def test_bytes_accepted(self):
        doc = RigParser().parse_yaml(MINIMAL_RIG.encode('utf-8'))
        assert 'cameras' in doc.data

    def test_invalid_yaml_reports_line(self):
        with pytest.raises(ConfigError) as exc_info:
            RigParser().parse_yaml("cameras:\n  - name: [unclosed\n", "broken.yaml")
        assert "broken.yaml:" in str(exc_info.value)
        assert "invalid YAML" in str(exc_info.value)

    @pytest.mark.parametrize("text", ["", "- a\n- b\n", "just text\n"])
    def test_non_mapping_rejected(self, text):
        with pytest.raises(ConfigError) as exc_info:
            RigParser().parse_yaml(text, "flat.yaml")
        assert "flat.yaml:1" in str(exc_info.value)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError) as exc_info:
            RigParser().parse_file(tmp_path / "absent.yaml")
        assert "absent.yaml" in str(exc_info.value)


class TestBuildRig:
    """Test constructing cameras, grid and bins."""

    def test_pair_rig(self, pair_rig_file):
        rig = load_rig(pair_rig_file)

        assert rig.cameras.names == ('front', 'rear')
        assert rig.cameras[0].intrinsics.model.kind == ModelKind.POLYNOMIAL
        assert rig.cameras[1].intrinsics.model.kind == ModelKind.DOUBLE_SPHERE
        assert rig.stride == (2, 2)
        assert (rig.spec.nx, rig.spec.ny) == (32, 32)
        assert len(rig.bins) == 15

    def test_yaw_and_pitch_orient_the_optical_axis(self, pair_rig_file):
        rear = load_rig(pair_rig_file).cameras[1]
        axis = rear.extrinsics.rotation[:, 2]
        expected = [-math.cos(0.5), 0.0, -math.sin(0.5)]
        np.testing.assert_allclose(axis, expected, atol=1e-12)

    def test_defaults_when_blocks_omitted(self):
        parser = RigParser()
        doc = parser.parse_yaml(MINIMAL_RIG)
        rig = parser.build_rig(doc)
        assert rig.spec.x_min == -rig.spec.x_max
        assert len(rig.bins) > 0
        assert rig.stride[0] == rig.stride[1]

    def test_stride_pair(self):
        doc = RigParser().parse_yaml(MINIMAL_RIG + "feature_stride: [4, 8]\n")
        assert RigParser().build_stride(doc) == (4, 8)

    def test_explicit_rotation(self):
        text = MINIMAL_RIG + "    rotation: [1, 0, 0, 0, 1, 0, 0, 0, 1]\n"
        rig = RigParser().build_rig(RigParser().parse_yaml(text))
        np.testing.assert_array_equal(rig.cameras[0].extrinsics.rotation, np.eye(3))

    def test_invalid_rig_lists_every_error(self, invalid_rig_file):
        with pytest.raises(ConfigError) as exc_info:
            load_rig(invalid_rig_file)
        message = str(exc_info.value)
        assert "invalid_rig.yaml:12" in message
        assert "invalid_rig.yaml:18" in message
        assert "duplicate camera name 'front'" in message


class TestSerialization:
    """Test writing a rig back in the rig-file schema."""

    def test_yaml_round_trip(self, surround_rig_file, tmp_path):
        rig = load_rig(surround_rig_file)
        path = tmp_path / "copy.yaml"
        path.write_text(rig_to_yaml(rig))

        copy = load_rig(path)

        assert copy.cameras.names == rig.cameras.names
        assert copy.spec == rig.spec
        assert copy.stride == rig.stride
        for a, b in zip(rig.cameras, copy.cameras):
            assert a.intrinsics.model.kind == b.intrinsics.model.kind
            assert a.intrinsics.model.coeffs == b.intrinsics.model.coeffs
            assert a.intrinsics.model.theta_max == b.intrinsics.model.theta_max
            np.testing.assert_array_equal(a.extrinsics.rotation, b.extrinsics.rotation)
            np.testing.assert_array_equal(a.extrinsics.translation, b.extrinsics.translation)
