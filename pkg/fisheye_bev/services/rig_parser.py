"""
Rig file parser service.
Handles YAML parsing, line bookkeeping and construction of the rig objects
(not rule validation; use RigValidator for that).
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import yaml

from fisheye_bev.services.camera import (
    Camera,
    CameraExtrinsics,
    CameraIntrinsics,
    CameraRig,
    DistortionModel,
    look_rotation,
)
from fisheye_bev.services.lift import DepthBins
from fisheye_bev.services.pool import GridSpec
from fisheye_bev.utils import config
from fisheye_bev.utils.errors import ConfigError
from fisheye_bev.utils.logger import setup_logger

logger = setup_logger(__name__)

Path_ = Tuple[Union[str, int], ...]


@dataclass
class RigDocument:
    """Parsed rig file: plain data plus the source line of every key."""

    data: Dict[str, Any]
    filename: str
    lines: Dict[Path_, int] = field(default_factory=dict)

    def line_of(self, *path: Union[str, int]) -> int:
        """Line of the deepest known prefix of path (1-based)."""
        path = tuple(path)
        while path and path not in self.lines:
            path = path[:-1]
        return self.lines.get(path, 1)

    def where(self, *path: Union[str, int]) -> str:
        return f"{self.filename}:{self.line_of(*path)}"


@dataclass
class Rig:
    """Everything a rig file defines."""

    cameras: CameraRig
    spec: GridSpec
    bins: DepthBins
    stride: Tuple[int, int]


def _record_lines(node: yaml.Node, path: Path_, lines: Dict[Path_, int]) -> None:
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key = key_node.value
            _record_lines(value_node, path + (key,), lines)
            # keys report their own line, not their value's
            lines[path + (key,)] = key_node.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for index, item in enumerate(node.value):
            _record_lines(item, path + (index,), lines)


class RigParser:
    """
    Parses rig files.

    Responsibilities:
    - Parse YAML text
    - Check the document is a mapping
    - Record the line of every key for diagnostics
    - Build CameraRig / GridSpec / DepthBins from a validated document

    Does NOT validate rig rules (use RigValidator for that).
    """

    def parse_yaml(self, content: Union[bytes, str], filename: str = "rig.yaml") -> RigDocument:
        """
        Parse rig file content.

        Args:
            content: Raw file content
            filename: Name used in diagnostics

        Returns:
            RigDocument with data and line map

        Raises:
            ConfigError: If the text is not valid YAML or not a mapping
        """
        text = content.decode('utf-8') if isinstance(content, bytes) else content
        logger.info(f"Parsing rig file: {filename} ({len(text)} characters)")

        # Step 1: Parse YAML (data and node tree)
        try:
            data = yaml.safe_load(text)
            node = yaml.compose(text)
        except yaml.YAMLError as e:
            mark = getattr(e, 'problem_mark', None)
            line = mark.line + 1 if mark is not None else 1
            logger.error(f"Failed to parse rig YAML: {e}")
            raise ConfigError(f"{filename}:{line}: invalid YAML: {getattr(e, 'problem', None) or e}")

        # Step 2: Top level must be a mapping
        if not isinstance(data, dict) or node is None:
            raise ConfigError(f"{filename}:1: rig file must be a mapping with 'grid', 'depth_bins' and 'cameras'")

        # Step 3: Line bookkeeping
        lines: Dict[Path_, int] = {}
        _record_lines(node, (), lines)

        logger.debug(f"Rig file parsed: keys {sorted(data)}")
        return RigDocument(data=data, filename=filename, lines=lines)

    def parse_file(self, path: Union[str, Path]) -> RigDocument:
        path = Path(path)
        try:
            content = path.read_bytes()
        except OSError as e:
            raise ConfigError(f"{path}: cannot read rig file ({e.strerror})")
        return self.parse_yaml(content, str(path))

    # ------------------------------------------------------------------ build

    def build_grid(self, doc: RigDocument) -> GridSpec:
        grid = doc.data.get('grid')
        if grid is None:
            return GridSpec.centered()
        return GridSpec(grid['x_min'], grid['x_max'], grid['y_min'], grid['y_max'], grid['cell'])

    def build_bins(self, doc: RigDocument) -> DepthBins:
        bins = doc.data.get('depth_bins')
        if bins is None:
            return DepthBins(config.DEPTH_MIN, config.DEPTH_MAX, config.DEPTH_STEP)
        return DepthBins(bins['d_min'], bins['d_max'], bins['step'])

    def build_stride(self, doc: RigDocument) -> Tuple[int, int]:
        stride = doc.data.get('feature_stride', config.FEATURE_STRIDE)
        if isinstance(stride, (list, tuple)):
            return int(stride[0]), int(stride[1])
        return int(stride), int(stride)

    def build_camera(self, entry: Dict[str, Any]) -> Camera:
        inverse_poly = entry.get('inverse_poly')
        model = DistortionModel(
            kind=entry['model'],
            f=entry['f'],
            coeffs=tuple(entry.get('coeffs') or ()),
            inverse_poly=tuple(inverse_poly) if inverse_poly else None,
            theta_max=entry.get('theta_max'),
        )
        intr = CameraIntrinsics(model, cx=entry['cx'], cy=entry['cy'], width=entry['width'], height=entry['height'])
        if 'rotation' in entry:
            rotation = np.asarray(entry['rotation'], dtype=np.float64)
        else:
            rotation = look_rotation(float(entry.get('yaw', 0.0)), float(entry.get('pitch', 0.0)))
        extr = CameraExtrinsics(rotation, entry['translation'])
        return Camera(str(entry['name']), intr, extr)

    def build_rig(self, doc: RigDocument) -> Rig:
        """Construct the rig objects from a document that passed RigValidator."""
        cameras = CameraRig(tuple(self.build_camera(entry) for entry in doc.data['cameras']))
        rig = Rig(cameras=cameras, spec=self.build_grid(doc), bins=self.build_bins(doc), stride=self.build_stride(doc))
        logger.info(
            f"Rig loaded: {len(cameras)} camera(s), grid {rig.spec.nx}x{rig.spec.ny}, "
            f"{len(rig.bins)} depth bins, stride {rig.stride}"
        )
        return rig


def load_rig(path: Union[str, Path], parser: Optional[RigParser] = None) -> Rig:
    """
    Parse, validate and build a rig file.

    Raises:
        ConfigError: every violated rule, one per line, prefixed with file:line
    """
    from fisheye_bev.services.validator import RigValidator

    parser = parser or RigParser()
    doc = parser.parse_file(path)
    is_valid, errors = RigValidator().validate_all(doc)
    if not is_valid:
        logger.warning(f"Rig validation failed with {len(errors)} error(s)")
        raise ConfigError("Rig validation failed:\n" + "\n".join(f"- {err}" for err in errors))
    return parser.build_rig(doc)


def camera_to_dict(camera: Camera) -> Dict[str, Any]:
    intr, model = camera.intrinsics, camera.intrinsics.model
    entry: Dict[str, Any] = {
        'name': camera.name,
        'model': model.kind.value,
        'f': model.f,
        'cx': intr.cx,
        'cy': intr.cy,
        'width': intr.width,
        'height': intr.height,
        'coeffs': list(model.coeffs),
        'theta_max': model.theta_max,
        'rotation': [float(v) for v in camera.extrinsics.rotation.ravel()],
        'translation': [float(v) for v in camera.extrinsics.translation],
    }
    if model.inverse_poly is not None:
        entry['inverse_poly'] = list(model.inverse_poly)
    return entry


def rig_to_yaml(rig: Rig) -> str:
    """Serialize a rig in the rig-file schema."""
    document = {
        'grid': rig.spec.to_dict(),
        'depth_bins': {'d_min': rig.bins.d_min, 'd_max': rig.bins.d_max, 'step': rig.bins.step},
        'feature_stride': list(rig.stride),
        'cameras': [camera_to_dict(camera) for camera in rig.cameras],
    }
    return yaml.safe_dump(document, sort_keys=False)
