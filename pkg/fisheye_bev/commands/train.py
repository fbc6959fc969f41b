"""
`train` command: fit pooling parameters and the class head, write a
checkpoint and the loss curve.

Samples come from the noisy-overlap fixture (default) or from seeded
synthetic scenes lifted through the rig. --resume continues a checkpoint with
its stored configuration; the continuation is identical to an uninterrupted run.
"""

import argparse
from pathlib import Path
from typing import Any, Dict, List

from fisheye_bev.commands.common import add_common_arguments, load_setup, prepare_out_dir, workers_from
from fisheye_bev.services.learn import (
    TrainConfig,
    TrainSample,
    ablation_frame,
    build_samples,
    load_checkpoint,
    loss_curve_text,
    make_noisy_overlap_fixture,
    noisy_overlap_config,
    run_ablation,
    save_checkpoint,
    train,
)
from fisheye_bev.services.pipeline import PipelineConfig
from fisheye_bev.services.scenesim import SceneParams, make_scene
from fisheye_bev.services.tensor_io import write_text
from fisheye_bev.utils.errors import ConfigError
from fisheye_bev.utils.logger import setup_logger

logger = setup_logger(__name__)

SOURCES = ('noisy-overlap', 'scenes')

# CLI flag -> TrainConfig field
OVERRIDES = {
    'strategy': 'strategy',
    'optimizer': 'optimizer',
    'lr': 'lr',
    'class_weights': 'class_weights',
    'lam': 'lam',
    'batch_size': 'batch_size',
    'head_scale': 'head_scale',
}


def register(subparsers) -> None:
    parser = subparsers.add_parser('train', help='Train pooling parameters and the class head')
    add_common_arguments(parser)
    parser.add_argument('--steps', type=int, default=200, help='Optimizer steps (default: 200)')
    parser.add_argument('--source', default='noisy-overlap', help=f"Sample source: {', '.join(SOURCES)}")
    parser.add_argument('--samples', type=int, default=4, help='Fixture samples or scenes (default: 4)')
    parser.add_argument('--difficulty', default='easy', help='Scene preset for --source scenes')
    parser.add_argument('--feature-noise', type=float, default=0.0, help='Gaussian noise on scene features')
    parser.add_argument('--strategy', default=None, help='Pooling strategy')
    parser.add_argument('--optimizer', default=None, help='gd or adam')
    parser.add_argument('--lr', type=float, default=None, help='Learning rate')
    parser.add_argument('--class-weights', default=None, help='Class weights, e.g. 13-3-1-1')
    parser.add_argument('--lam', type=float, default=None, help='Occlusion loss weight')
    parser.add_argument('--batch-size', type=int, default=None, help='Samples per step')
    parser.add_argument('--head-scale', type=float, default=None, help='Initial head weight')
    parser.add_argument('--no-occlusion', action='store_true', help='Drop the occlusion loss')
    parser.add_argument('--freeze-head', action='store_true', help='Keep the class head fixed')
    parser.add_argument('--train-head', action='store_true', help='Train the class head (fixture default: fixed)')
    parser.add_argument('--resume', type=Path, default=None, help='Checkpoint directory to continue from')
    parser.add_argument('--ablation', action='store_true',
                        help='Train the default variants (class weights, occlusion loss, strategies) and compare')
    parser.set_defaults(handler=run)


def config_from_args(args: argparse.Namespace, workers: int) -> TrainConfig:
    overrides: Dict[str, Any] = {field: getattr(args, flag) for flag, field in OVERRIDES.items()
                                 if getattr(args, flag) is not None}
    overrides.update(seed=args.seed, workers=workers)
    if args.no_occlusion:
        overrides['occlusion'] = False
    if args.freeze_head:
        overrides['head_trainable'] = False
    if args.train_head:
        overrides['head_trainable'] = True
    if args.source == 'noisy-overlap':
        return noisy_overlap_config(**overrides)
    return TrainConfig(**overrides)


def load_samples(args: argparse.Namespace, workers: int) -> List[TrainSample]:
    if args.source not in SOURCES:
        raise ConfigError(f"Unknown sample source '{args.source}'. Expected one of: {', '.join(SOURCES)}")
    if args.samples < 1:
        raise ConfigError(f"--samples must be >= 1, got {args.samples}")
    if args.source == 'noisy-overlap':
        return make_noisy_overlap_fixture(args.seed, num_samples=args.samples)

    setup = load_setup(args.config)
    pipeline_cfg = PipelineConfig(spec=setup.spec, bins=setup.bins, stride=setup.stride)
    params = SceneParams.preset(args.difficulty, setup.spec)
    scenes = [make_scene(setup.spec, args.seed + i, params) for i in range(args.samples)]
    return build_samples(scenes, setup.cameras, pipeline_cfg, args.feature_noise, args.seed, workers)


def run(args: argparse.Namespace) -> int:
    # Step 1: Configuration and samples
    workers = workers_from(args)
    samples = load_samples(args, workers)
    out_dir = prepare_out_dir(args.out_dir)

    if args.ablation:
        cfg = config_from_args(args, workers)
        reports = run_ablation(samples, cfg, steps=args.steps)
        table = ablation_frame(reports).to_string(float_format=lambda v: f"{v:.3f}")
        write_text(out_dir / 'ablation.txt', table + "\n")
        print(table)
        logger.info(f"Ablation completed: {len(reports)} variant(s)")
        return 0

    # Step 2: Fresh start or resume
    state = None
    if args.resume is not None:
        state, cfg = load_checkpoint(args.resume)
        cfg = TrainConfig.from_dict(cfg.to_dict(), workers=workers)
        logger.info(f"Resuming from step {state.step} with the checkpoint's configuration")
    else:
        cfg = config_from_args(args, workers)

    # Step 3: Train and save
    state = train(samples, cfg, args.steps, state)
    save_checkpoint(state, cfg, out_dir)
    write_text(out_dir / 'loss_curve.txt', loss_curve_text(state.loss_history))

    logger.info(f"Training completed: step {state.step}, final loss {state.loss_history[-1]:.6f}")
    return 0
