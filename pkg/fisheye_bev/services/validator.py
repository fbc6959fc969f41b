"""
Validator service for rig files.
Checks a parsed RigDocument before any camera object is built and reports
every problem with its file and line.
"""

from typing import Any, List, Tuple

from fisheye_bev.services.lift import DepthBins
from fisheye_bev.services.pool import GridSpec
from fisheye_bev.services.rig_parser import RigDocument, RigParser
from fisheye_bev.utils.errors import ValidationError

TOP_LEVEL_KEYS = ('grid', 'depth_bins', 'feature_stride', 'cameras')
GRID_KEYS = ('x_min', 'x_max', 'y_min', 'y_max', 'cell')
BIN_KEYS = ('d_min', 'd_max', 'step')
CAMERA_REQUIRED = ('name', 'model', 'f', 'cx', 'cy', 'width', 'height', 'translation')
CAMERA_OPTIONAL = ('coeffs', 'inverse_poly', 'theta_max', 'rotation', 'yaw', 'pitch')

# substrings of a construction error mapped to the key they concern
ERROR_KEYS = (
    ('inverse_poly', 'inverse_poly'),
    ('coefficient', 'coeffs'),
    ('theta_max', 'theta_max'),
    ('not finite at', 'theta_max'),
    ('strictly increasing', 'coeffs'),
    ('Focal length', 'f'),
    ('Principal point', 'cx'),
    ('Image size', 'width'),
    ('rotation', 'rotation'),
    ('translation', 'translation'),
    ('camera model', 'model'),
)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _numbers(value: Any, length: int) -> bool:
    return isinstance(value, list) and len(value) == length and all(_is_number(v) for v in value)


class RigValidator:
    """
    Validates rig documents.

    This class performs the checks a rig must pass before lifting:
    - Known top-level keys and a non-empty camera list
    - Grid and depth-bin blocks that form a valid GridSpec / DepthBins
    - Per-camera field presence and types
    - Per-camera model construction (monotonic r(theta), inverse_poly
      consistency, orthonormal rotation)
    - Unique camera names and image sizes divisible by the feature stride
    """

    def __init__(self, parser: RigParser = None):
        self.parser = parser or RigParser()

    def validate_top_level(self, doc: RigDocument) -> Tuple[bool, str]:
        unknown = [key for key in doc.data if key not in TOP_LEVEL_KEYS]
        if unknown:
            return (
                False,
                f"{doc.where(unknown[0])}: unknown key(s) {', '.join(map(str, unknown))}. "
                f"Expected: {', '.join(TOP_LEVEL_KEYS)}",
            )
        return (True, "")

    def validate_non_empty(self, doc: RigDocument) -> Tuple[bool, str]:
        cameras = doc.data.get('cameras')
        if not isinstance(cameras, list) or len(cameras) == 0:
            return (False, f"{doc.where('cameras')}: rig must list at least one camera under 'cameras'")
        return (True, "")

    def validate_grid(self, doc: RigDocument) -> Tuple[bool, str]:
        """
        Validate the optional 'grid' block.

        Returns:
            Tuple of (is_valid, error_message)
        """
        if 'grid' not in doc.data:
            return (True, "")
        grid = doc.data['grid']
        if not isinstance(grid, dict):
            return (False, f"{doc.where('grid')}: 'grid' must be a mapping with keys {', '.join(GRID_KEYS)}")
        for key in GRID_KEYS:
            if not _is_number(grid.get(key)):
                return (False, f"{doc.where('grid', key)}: grid.{key} must be a number, got {grid.get(key)!r}")
        try:
            GridSpec(*(grid[key] for key in GRID_KEYS))
        except ValidationError as e:
            return (False, f"{doc.where('grid')}: {e}")
        return (True, "")

    def validate_depth_bins(self, doc: RigDocument) -> Tuple[bool, str]:
        if 'depth_bins' not in doc.data:
            return (True, "")
        bins = doc.data['depth_bins']
        if not isinstance(bins, dict):
            return (False, f"{doc.where('depth_bins')}: 'depth_bins' must be a mapping with keys {', '.join(BIN_KEYS)}")
        for key in BIN_KEYS:
            if not _is_number(bins.get(key)):
                return (
                    False,
                    f"{doc.where('depth_bins', key)}: depth_bins.{key} must be a number, got {bins.get(key)!r}",
                )
        try:
            DepthBins(*(bins[key] for key in BIN_KEYS))
        except ValidationError as e:
            return (False, f"{doc.where('depth_bins')}: {e}")
        return (True, "")

    def validate_feature_stride(self, doc: RigDocument) -> Tuple[bool, str]:
        if 'feature_stride' not in doc.data:
            return (True, "")
        stride = doc.data['feature_stride']
        values = stride if isinstance(stride, list) else [stride]
        if len(values) not in (1, 2) or not all(isinstance(v, int) and not isinstance(v, bool) and v >= 1
                                                for v in values):
            return (
                False,
                f"{doc.where('feature_stride')}: feature_stride must be a positive integer or "
                f"[sy, sx], got {stride!r}",
            )
        return (True, "")

    def validate_camera(self, doc: RigDocument, index: int) -> Tuple[bool, str]:
        """
        Validate one camera entry: fields first, then model construction.

        Returns:
            Tuple of (is_valid, error_message) naming the first problem found
        """
        entry = doc.data['cameras'][index]
        where = doc.where('cameras', index)
        if not isinstance(entry, dict):
            return (False, f"{where}: camera entry must be a mapping")
        label = f"camera '{entry.get('name', index)}'"

        missing = [key for key in CAMERA_REQUIRED if key not in entry]
        if missing:
            return (False, f"{where}: {label} is missing {', '.join(missing)}")
        unknown = [key for key in entry if key not in CAMERA_REQUIRED + CAMERA_OPTIONAL]
        if unknown:
            return (False, f"{doc.where('cameras', index, unknown[0])}: {label} has unknown key(s) "
                           f"{', '.join(map(str, unknown))}")

        for key in ('f', 'cx', 'cy', 'width', 'height', 'theta_max', 'yaw', 'pitch'):
            if key in entry and not _is_number(entry[key]):
                return (False, f"{doc.where('cameras', index, key)}: {label} {key} must be a number, "
                               f"got {entry[key]!r}")
        for key in ('coeffs', 'inverse_poly'):
            value = entry.get(key)
            if value is not None and not (isinstance(value, list) and all(_is_number(v) for v in value)):
                return (False, f"{doc.where('cameras', index, key)}: {label} {key} must be a list of numbers")
        if 'rotation' in entry and not _numbers(entry['rotation'], 9):
            return (False, f"{doc.where('cameras', index, 'rotation')}: {label} rotation must be 9 numbers "
                           f"(row-major 3x3)")
        if not _numbers(entry['translation'], 3):
            return (False, f"{doc.where('cameras', index, 'translation')}: {label} translation must be 3 numbers")

        # Model construction runs the monotonicity, inverse_poly and rotation checks
        try:
            self.parser.build_camera(entry)
        except ValidationError as e:
            key = next((key for text, key in ERROR_KEYS if text in str(e) and key in entry), None)
            line = doc.where('cameras', index, key) if key else where
            return (False, f"{line}: {label}: {e}")
        return (True, "")

    def validate_no_duplicates(self, doc: RigDocument) -> Tuple[bool, str]:
        seen = set()
        duplicates = []
        for index, entry in enumerate(doc.data['cameras']):
            name = entry.get('name') if isinstance(entry, dict) else None
            if name is None:
                continue
            if name in seen:
                duplicates.append(f"{doc.where('cameras', index, 'name')}: duplicate camera name '{name}'")
            seen.add(name)
        if duplicates:
            return (False, "\n".join(duplicates))
        return (True, "")

    def validate_stride_divides(self, doc: RigDocument) -> Tuple[bool, str]:
        """Every image size must be a whole multiple of the feature stride."""
        sy, sx = self.parser.build_stride(doc)
        problems = []
        for index, entry in enumerate(doc.data['cameras']):
            width, height = entry['width'], entry['height']
            if width % sx or height % sy:
                problems.append(
                    f"{doc.where('cameras', index, 'width')}: camera '{entry['name']}' image "
                    f"{width}x{height} is not divisible by feature_stride ({sy}, {sx})"
                )
        if problems:
            return (False, "\n".join(problems))
        return (True, "")

    def validate_all(self, doc: RigDocument) -> Tuple[bool, List[str]]:
        """
        Run all validations and collect errors.

        Per-camera and stride checks only run on a structurally sound camera
        list, so one broken entry does not cascade into unrelated messages.

        Returns:
            Tuple of (is_valid, error_messages)
            - is_valid: True only if ALL validations pass
            - error_messages: one "file:line: message" entry per problem

        Example:
            is_valid, errors = validator.validate_all(doc)
            if not is_valid:
                raise ConfigError("\\n".join(errors))
        """
        errors: List[str] = []

        def collect(result: Tuple[bool, str]) -> bool:
            is_valid, message = result
            if not is_valid:
                errors.extend(message.split("\n"))
            return is_valid

        collect(self.validate_top_level(doc))
        collect(self.validate_grid(doc))
        collect(self.validate_depth_bins(doc))
        stride_ok = collect(self.validate_feature_stride(doc))

        if not collect(self.validate_non_empty(doc)):
            return (False, errors)

        cameras_ok = all([collect(self.validate_camera(doc, i)) for i in range(len(doc.data['cameras']))])
        collect(self.validate_no_duplicates(doc))
        if cameras_ok and stride_ok:
            collect(self.validate_stride_divides(doc))

        return (len(errors) == 0, errors)

