"""
Services Package

This package contains the numerical services of the fisheye BEV engine and
the file formats they are stored in.

Available services:
- camera: Radial distortion models, projection/unprojection, cylindrical rectification
- lift: Per-pixel rays and depth-bin lifting into vehicle-frame points
- pool: Splatting into the BEV grid and the six pooling strategies
- occlusion: Occlusion map from splat counts
- loss: Occlusion-masked cross-entropy and occlusion BCE
- metrics: IoU / mIoU evaluation and report formats
- scenesim: Synthetic scenes, ray-cast renders and ground truth
- pipeline: Frame composition (render, lift, splat, pool, evaluate)
- learn: Training, gradient checks, ablations, checkpoints
- tensor_io / image_export: FBVT tensors, PGM/PPM renders
- RigParser / RigValidator: Rig file parsing and validation
"""

from . import camera, image_export, learn, lift, loss, metrics, occlusion, pipeline, pool, scenesim, tensor_io
from .rig_parser import Rig, RigDocument, RigParser, load_rig
from .validator import RigValidator

# Define what gets imported with "from fisheye_bev.services import *"
__all__ = [
    'camera', 'image_export', 'learn', 'lift', 'loss', 'metrics', 'occlusion', 'pipeline', 'pool',
    'scenesim', 'tensor_io',
    'Rig', 'RigDocument', 'RigParser', 'RigValidator', 'load_rig',
]
