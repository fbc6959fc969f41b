"""
`eval` command (module evaluate): predicted and ground-truth grids -> IoU report.

Either four grid tensors (--pred-class --pred-occ --gt-class --gt-occ) or the
five scores directly (--scores occlusion vehicles markings street background).
The text table goes to stdout; report.txt (key=value) goes to --out-dir.
"""

import argparse
from pathlib import Path

from fisheye_bev.commands.common import prepare_out_dir
from fisheye_bev.services.metrics import evaluate, format_report, report_from_scores, report_to_kv
from fisheye_bev.services.tensor_io import read_tensor, write_text
from fisheye_bev.utils.errors import UsageError
from fisheye_bev.utils.logger import setup_logger

logger = setup_logger(__name__)

GRID_FLAGS = ('pred_class', 'pred_occ', 'gt_class', 'gt_occ')


def register(subparsers) -> None:
    parser = subparsers.add_parser('eval', help='Score predictions against ground truth')
    parser.add_argument('--pred-class', type=Path, help='Predicted class ids (nx, ny)')
    parser.add_argument('--pred-occ', type=Path, help='Predicted occlusion probability (nx, ny)')
    parser.add_argument('--gt-class', type=Path, help='Ground-truth class ids (nx, ny)')
    parser.add_argument('--gt-occ', type=Path, help='Ground-truth occlusion (nx, ny), 1 = occluded')
    parser.add_argument('--scores', type=float, nargs=5, default=None,
                        metavar=('OCCLUSION', 'VEHICLES', 'MARKINGS', 'STREET', 'BACKGROUND'),
                        help='Five IoU scores to average instead of grids')
    parser.add_argument('--out-dir', type=Path, default=None, help='Directory for report.txt')
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    # Step 1: Build the report
    if args.scores is not None:
        report = report_from_scores(args.scores)
    else:
        missing = [f"--{name.replace('_', '-')}" for name in GRID_FLAGS if getattr(args, name) is None]
        if missing:
            raise UsageError(f"eval needs --scores or all four grids; missing {', '.join(missing)}")
        grids = {name: read_tensor(getattr(args, name)) for name in GRID_FLAGS}
        report = evaluate(grids['pred_class'], grids['pred_occ'], grids['gt_class'], grids['gt_occ'])

    # Step 2: Print and save
    print(format_report(report))
    if args.out_dir is not None:
        path = write_text(prepare_out_dir(args.out_dir) / 'report.txt', report_to_kv(report))
        logger.info(f"Report written to {path}")
    logger.info(f"Evaluation completed: mIoU={report.miou:.3f}")
    return 0
