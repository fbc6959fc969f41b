"""
Commands Package

This package contains the command-line handlers, one module per command.

Available commands:
- project: Rig + image tensors -> rays, lifted points, per-camera grids
- pool: Per-camera grids -> pooled grid
- evaluate: the `eval` command, predictions + ground truth -> IoU report
- demo: Full pipeline on a synthetic scene
- train: Training, resume and ablations
"""

from . import demo, evaluate, pool, project, train

COMMANDS = (project, pool, evaluate, demo, train)

# Define what gets imported with "from fisheye_bev.commands import *"
__all__ = ['COMMANDS', 'demo', 'evaluate', 'pool', 'project', 'train']
