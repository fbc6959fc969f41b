"""
Unit tests for the metrics service (IoU, mIoU, visibility filter, reports).
"""

import numpy as np
import pytest

from fisheye_bev.services.metrics import (
    BACKGROUND,
    MARKINGS,
    STREET,
    VEHICLES,
    EvalAccumulator,
    evaluate,
    format_report,
    iou,
    miou_from_scores,
    report_frame,
    report_from_kv,
    report_from_scores,
    report_to_kv,
    visibility_filter,
)
from fisheye_bev.utils.errors import DataError, DomainError, ShapeError


pytestmark = pytest.mark.unit


# occlusion, vehicles, markings, street, background -> rounded mIoU
SCORE_ROWS = [
    pytest.param((0.815, 0.776, 0.517, 0.895, 0.978), 0.796, 0.0005, id="easy"),
    pytest.param((0.682, 0.764, 0.364, 0.858, 0.782), 0.690, 0.0005, id="medium"),
    # mean is 0.4654; 0.466 is off by more than half a unit
    pytest.param((0.666, 0.464, 0.176, 0.572, 0.449), 0.466, 0.001, id="hard"),
]


class TestIoU:
    """Test the mask IoU."""

    def test_known_value(self):
        pred = np.array([[1, 1], [0, 0]], dtype=bool)
        gt = np.array([[1, 0], [1, 0]], dtype=bool)
        assert iou(pred, gt) == pytest.approx(1 / 3)

    def test_symmetric(self, rng):
        a = rng.random((8, 8)) > 0.5
        b = rng.random((8, 8)) > 0.5
        assert iou(a, b) == iou(b, a)

    def test_both_empty_is_perfect(self):
        assert iou(np.zeros((3, 3), bool), np.zeros((3, 3), bool)) == 1.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            iou(np.zeros((3, 3), bool), np.zeros((3, 4), bool))


class TestMeanIoU:
    """Test the five-score mean."""

    @pytest.mark.parametrize("scores,expected,tolerance", SCORE_ROWS)
    def test_known_score_rows(self, scores, expected, tolerance):
        assert abs(miou_from_scores(scores) - expected) <= tolerance

    def test_wrong_count_rejected(self):
        with pytest.raises(DomainError):
            miou_from_scores([0.5, 0.5, 0.5, 0.5])

    def test_out_of_range_score_rejected(self):
        with pytest.raises(DomainError):
            miou_from_scores([0.5, 0.5, 1.2, 0.5, 0.5])

    def test_report_from_scores_orders_classes(self):
        report = report_from_scores([0.1, 0.2, 0.3, 0.4, 0.5])
        assert report.iou_occlusion == 0.1
        assert report.iou_per_class == {'vehicles': 0.2, 'markings': 0.3, 'street': 0.4, 'background': 0.5}


class TestVisibilityFilter:
    """Test the >= 50% visibility rule."""

    def test_boundary_inclusive(self):
        assert visibility_filter(np.array([0.5, 0.49, 1.0, 0.0])).tolist() == [True, False, True, False]


class TestEvaluate:
    """Test single-frame and accumulated evaluation."""

    @pytest.fixture
    def frame(self, rng):
        gt_class = rng.choice([VEHICLES, MARKINGS, STREET, BACKGROUND], size=(10, 10))
        gt_occ = (rng.random((10, 10)) > 0.7).astype(float)
        return gt_class, gt_occ

    def test_perfect_prediction(self, frame):
        gt_class, gt_occ = frame
        report = evaluate(gt_class, gt_occ, gt_class, gt_occ)
        assert report.miou == 1.0
        assert all(value == 1.0 for value in report.scores().values())

    def test_invisible_cells_ignored(self):
        """Test that a wrong label in an occluded cell does not lower the class IoU."""
        gt_class = np.full((2, 2), STREET)
        gt_occ = np.array([[0.0, 0.0], [0.0, 0.9]])
        pred_class = gt_class.copy()
        pred_class[1, 1] = VEHICLES

        report = evaluate(pred_class, gt_occ, gt_class, gt_occ)

        assert report.iou_per_class['street'] == 1.0
        assert report.iou_per_class['vehicles'] == 1.0
        assert report.visible_cell_fraction == 0.75

    def test_breaking_a_correct_cell_never_raises_a_class_iou(self, frame, rng):
        """Test that each flip of a correct cell leaves every class IoU equal or lower."""
        gt_class, _ = frame
        gt_occ = np.zeros_like(gt_class, dtype=float)
        pred_class = gt_class.copy()
        previous = evaluate(pred_class, gt_occ, gt_class, gt_occ).iou_per_class

        for flat in rng.permutation(gt_class.size)[:40]:
            cell = np.unravel_index(flat, gt_class.shape)
            others = [c for c in (VEHICLES, MARKINGS, STREET, BACKGROUND) if c != gt_class[cell]]
            pred_class[cell] = rng.choice(others)
            current = evaluate(pred_class, gt_occ, gt_class, gt_occ).iou_per_class
            for name, value in current.items():
                assert value <= previous[name], f"{name} rose from {previous[name]} to {value} at cell {cell}"
            previous = current

    def test_occlusion_iou_binarizes(self):
        pred_occ = np.array([[0.6, 0.4], [0.9, 0.0]])
        gt_occ = np.array([[1.0, 1.0], [1.0, 0.0]])
        report = evaluate(np.full((2, 2), STREET), pred_occ, np.full((2, 2), STREET), gt_occ)
        assert report.iou_occlusion == pytest.approx(2 / 3)

    def test_accumulation_order_invariant(self, rng):
        frames = []
        for _ in range(3):
            gt = rng.integers(1, 5, size=(6, 6))
            pred = np.where(rng.random((6, 6)) > 0.3, gt, rng.integers(1, 5, size=(6, 6)))
            occ = (rng.random((6, 6)) > 0.6).astype(float)
            frames.append((pred, rng.random((6, 6)), gt, occ))

        forward, backward = EvalAccumulator(), EvalAccumulator()
        for args in frames:
            forward.add(*args)
        for args in reversed(frames):
            backward.add(*args)
        split_a, split_b = EvalAccumulator(), EvalAccumulator()
        split_a.add(*frames[0])
        for args in frames[1:]:
            split_b.add(*args)

        assert forward.report() == backward.report()
        assert split_a.merge(split_b).report() == forward.report()
        assert forward.frames == 3

    def test_bad_class_id_rejected(self, frame):
        gt_class, gt_occ = frame
        pred = gt_class.copy()
        pred[0, 0] = 9
        with pytest.raises(DataError):
            evaluate(pred, gt_occ, gt_class, gt_occ)

    def test_shape_mismatch_rejected(self, frame):
        gt_class, gt_occ = frame
        with pytest.raises(ShapeError):
            evaluate(gt_class[:5], gt_occ, gt_class, gt_occ)


class TestReportFormats:
    """Test text and key=value reports."""

    def test_table_has_scores_and_miou(self):
        report = report_from_scores([0.815, 0.776, 0.517, 0.895, 0.978], visible_cell_fraction=0.5)
        frame = report_frame(report)
        assert frame['score'].tolist() == ['occlusion', 'vehicles', 'markings', 'street', 'background', 'miou']

        text = format_report(report)
        assert "0.796" in text
        assert "visible cells: 50.0%" in text

    def test_kv_round_trip(self):
        report = report_from_scores([0.25, 0.5, 0.75, 1.0, 0.0], visible_cell_fraction=0.8)
        parsed = report_from_kv(report_to_kv(report))
        assert parsed == report

    def test_kv_missing_key_rejected(self):
        with pytest.raises(DataError) as exc_info:
            report_from_kv("miou=0.5\n")
        assert "missing key" in str(exc_info.value)

    def test_kv_malformed_line_rejected(self):
        with pytest.raises(DataError):
            report_from_kv("iou.vehicles 0.5\n")
