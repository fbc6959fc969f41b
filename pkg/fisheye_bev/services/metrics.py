"""
Metrics service.

Semantic classes, IoU per class, occlusion IoU on binarized maps, the
five-score mIoU and the >= 50% visibility evaluation filter.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from fisheye_bev.utils.errors import DataError, DomainError, ShapeError
from fisheye_bev.utils.logger import setup_logger

logger = setup_logger(__name__)

# Semantic class ids
INVALID = 0
VEHICLES = 1
MARKINGS = 2
STREET = 3
BACKGROUND = 4

CLASS_NAMES = ('invalid', 'vehicles', 'markings', 'street', 'background')
NUM_CLASSES = len(CLASS_NAMES)
EVAL_CLASSES = (VEHICLES, MARKINGS, STREET, BACKGROUND)

# RGB per class id; invalid is black
PALETTE = {
    INVALID: (0x00, 0x00, 0x00),
    VEHICLES: (0x96, 0xBB, 0xCE),
    MARKINGS: (0xFC, 0x45, 0x38),
    STREET: (0xFD, 0xBF, 0x6F),
    BACKGROUND: (0xAB, 0x9A, 0xC0),
}

VISIBILITY_THRESHOLD = 0.5
OCCLUSION_THRESHOLD = 0.5


@dataclass
class EvalReport:
    iou_per_class: Dict[str, float]
    iou_occlusion: float
    miou: float
    visible_cell_fraction: float

    def scores(self) -> Dict[str, float]:
        """The five averaged scores: occlusion then the four semantic classes."""
        out = {'occlusion': self.iou_occlusion}
        out.update(self.iou_per_class)
        return out


def iou(pred_mask: np.ndarray, gt_mask: np.ndarray) -> float:
    """
    Intersection over union of two boolean masks.

    Returns 1.0 when both masks are empty.

    Raises:
        ShapeError: masks differ in shape
    """
    pred_mask = np.asarray(pred_mask, dtype=bool)
    gt_mask = np.asarray(gt_mask, dtype=bool)
    if pred_mask.shape != gt_mask.shape:
        raise ShapeError(f"IoU masks differ in shape: {pred_mask.shape} vs {gt_mask.shape}")
    union = np.count_nonzero(pred_mask | gt_mask)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred_mask & gt_mask) / union


def visibility_filter(gt_visibility: np.ndarray) -> np.ndarray:
    """Cells that are at least 50% visible (boundary inclusive)."""
    return np.asarray(gt_visibility, dtype=np.float64) >= VISIBILITY_THRESHOLD


def miou_from_scores(scores: Sequence[float]) -> float:
    """
    Mean of the five scores (occlusion, vehicles, markings, street, background).

    Raises:
        DomainError: wrong count or a score outside [0, 1]
    """
    values = [float(s) for s in scores]
    if len(values) != 1 + len(EVAL_CLASSES):
        raise DomainError(f"mIoU averages exactly {1 + len(EVAL_CLASSES)} scores, got {len(values)}")
    if not all(0.0 <= v <= 1.0 for v in values):
        raise DomainError(f"IoU scores must lie in [0, 1], got {values}")
    return float(np.mean(values))


def report_from_scores(scores: Sequence[float], visible_cell_fraction: float = float('nan')) -> EvalReport:
    values = [float(s) for s in scores]
    miou = miou_from_scores(values)
    per_class = {CLASS_NAMES[c]: v for c, v in zip(EVAL_CLASSES, values[1:])}
    return EvalReport(iou_per_class=per_class, iou_occlusion=values[0], miou=miou,
                      visible_cell_fraction=visible_cell_fraction)


@dataclass
class EvalAccumulator:
    """
    Intersection/union counts summed over frames; the IoUs are formed once in
    ``report()``, so accumulation order does not matter.
    """

    classes: Sequence[int] = EVAL_CLASSES
    intersection: Dict[str, int] = field(default_factory=dict)
    union: Dict[str, int] = field(default_factory=dict)
    visible_cells: int = 0
    total_cells: int = 0
    frames: int = 0

    def add(self, pred_class: np.ndarray, pred_occ: np.ndarray, gt_class: np.ndarray, gt_occ: np.ndarray) -> None:
        """
        Accumulate one frame.

        Args:
            pred_class: (nx, ny) predicted class ids
            pred_occ: (nx, ny) predicted occlusion probability p(o)
            gt_class: (nx, ny) ground-truth class ids
            gt_occ: (nx, ny) ground-truth occlusion p(o) (1 = occluded)
        """
        pred_class = np.asarray(pred_class)
        gt_class = np.asarray(gt_class)
        pred_occ = np.asarray(pred_occ, dtype=np.float64)
        gt_occ = np.asarray(gt_occ, dtype=np.float64)
        shapes = {pred_class.shape, gt_class.shape, pred_occ.shape, gt_occ.shape}
        if len(shapes) != 1:
            raise ShapeError(f"Evaluation grids differ in shape: {sorted(shapes)}")
        for name, grid in (('pred_class', pred_class), ('gt_class', gt_class)):
            if np.any((grid < 0) | (grid >= NUM_CLASSES)):
                raise DataError(f"{name} contains class ids outside [0, {NUM_CLASSES})")

        visible = visibility_filter(1.0 - gt_occ)
        for c in self.classes:
            name = CLASS_NAMES[c]
            pred_mask = (pred_class == c) & visible
            gt_mask = (gt_class == c) & visible
            self.intersection[name] = self.intersection.get(name, 0) + int(np.count_nonzero(pred_mask & gt_mask))
            self.union[name] = self.union.get(name, 0) + int(np.count_nonzero(pred_mask | gt_mask))

        pred_bin = pred_occ > OCCLUSION_THRESHOLD
        gt_bin = gt_occ > OCCLUSION_THRESHOLD
        self.intersection['occlusion'] = self.intersection.get('occlusion', 0) + int(np.count_nonzero(pred_bin & gt_bin))
        self.union['occlusion'] = self.union.get('occlusion', 0) + int(np.count_nonzero(pred_bin | gt_bin))

        self.visible_cells += int(np.count_nonzero(visible))
        self.total_cells += visible.size
        self.frames += 1

    def merge(self, other: 'EvalAccumulator') -> 'EvalAccumulator':
        merged = EvalAccumulator(classes=self.classes)
        for source in (self, other):
            for key, value in source.intersection.items():
                merged.intersection[key] = merged.intersection.get(key, 0) + value
            for key, value in source.union.items():
                merged.union[key] = merged.union.get(key, 0) + value
            merged.visible_cells += source.visible_cells
            merged.total_cells += source.total_cells
            merged.frames += source.frames
        return merged

    def _ratio(self, name: str) -> float:
        union = self.union.get(name, 0)
        return 1.0 if union == 0 else self.intersection.get(name, 0) / union

    def report(self) -> EvalReport:
        per_class = {CLASS_NAMES[c]: self._ratio(CLASS_NAMES[c]) for c in self.classes}
        occlusion = self._ratio('occlusion')
        miou = float(np.mean([occlusion] + list(per_class.values())))
        fraction = self.visible_cells / self.total_cells if self.total_cells else 0.0
        return EvalReport(iou_per_class=per_class, iou_occlusion=occlusion, miou=miou,
                          visible_cell_fraction=fraction)


def evaluate(
    pred_class: np.ndarray,
    pred_occ: np.ndarray,
    gt_class: np.ndarray,
    gt_occ: np.ndarray,
    classes: Optional[Iterable[int]] = None,
) -> EvalReport:
    """
    Single-frame evaluation.

    Semantic IoUs use cells with ground-truth visibility 1 - gt_occ >= 0.5;
    the occlusion IoU compares p(o) > 0.5 masks over all cells.

    Raises:
        ShapeError: grids differ in shape
        DataError: class id outside the five classes
    """
    acc = EvalAccumulator(classes=tuple(classes) if classes is not None else EVAL_CLASSES)
    acc.add(pred_class, pred_occ, gt_class, gt_occ)
    report = acc.report()
    logger.debug(f"Evaluated frame: mIoU={report.miou:.4f}")
    return report


def report_frame(report: EvalReport) -> pd.DataFrame:
    rows = [{'score': name, 'iou': value} for name, value in report.scores().items()]
    rows.append({'score': 'miou', 'iou': report.miou})
    return pd.DataFrame(rows)


def format_report(report: EvalReport) -> str:
    """Line-oriented text table of the five scores and the mIoU."""
    frame = report_frame(report)
    table = frame.to_string(index=False, formatters={'iou': lambda v: f"{v:.3f}"})
    return f"{table}\nvisible cells: {report.visible_cell_fraction:.1%}"


def report_to_kv(report: EvalReport) -> str:
    """One key=value per line: iou.<class>, iou.occlusion, miou, visible_cell_fraction."""
    lines = [f"iou.{name}={value:.6f}" for name, value in report.iou_per_class.items()]
    lines.append(f"iou.occlusion={report.iou_occlusion:.6f}")
    lines.append(f"miou={report.miou:.6f}")
    lines.append(f"visible_cell_fraction={report.visible_cell_fraction:.6f}")
    return '\n'.join(lines) + '\n'


def report_from_kv(text: str) -> EvalReport:
    """Parse the key=value document written by report_to_kv."""
    values: Dict[str, float] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        key, sep, value = line.partition('=')
        if not sep:
            raise DataError(f"Report line {number} is not key=value: '{line}'")
        try:
            values[key.strip()] = float(value)
        except ValueError:
            raise DataError(f"Report line {number} has a non-numeric value: '{line}'")
    try:
        per_class = {CLASS_NAMES[c]: values[f"iou.{CLASS_NAMES[c]}"] for c in EVAL_CLASSES}
        return EvalReport(
            iou_per_class=per_class,
            iou_occlusion=values['iou.occlusion'],
            miou=values['miou'],
            visible_cell_fraction=values.get('visible_cell_fraction', float('nan')),
        )
    except KeyError as missing:
        raise DataError(f"Report is missing key {missing}")
