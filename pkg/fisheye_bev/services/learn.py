"""
Learning service.

Trains the learnable pooling parameters together with a per-cell linear class
head and a logistic occlusion unit. There is no image encoder: samples carry
per-camera BEV features (one-hot semantic renders lifted with ground-truth
depth), so the trainable surface is the pooling strategy, the head and the
occlusion unit.

Includes:
- BevModel forward/backward over TrainSample batches
- GradientDescent and Adam optimizers over named parameter dicts
- train() with seeded batches, order-fixed accumulation and divergence checks
- grad_check() central-difference verification of analytic gradients
- The two-camera noisy-overlap fixture and the ablation driver
- Checkpoint save/load (tensor files plus a JSON manifest)
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from fisheye_bev.services.camera import INTRINSIC_VECTOR_SIZE, CameraRig
from fisheye_bev.services.loss import LossConfig, occlusion_loss, semantic_loss, sigmoid, softmax
from fisheye_bev.services.metrics import NUM_CLASSES, EvalAccumulator, EvalReport, report_frame
from fisheye_bev.services.occlusion import occlusion_map
from fisheye_bev.services.pipeline import PipelineConfig, config_hash, intrinsic_vectors, lift_frame
from fisheye_bev.services.pool import PoolParams, PoolStrategy, init_pool_params, pool, pool_backward
from fisheye_bev.services.scenesim import Scene, gt_occlusion
from fisheye_bev.services.tensor_io import read_tensor, write_tensor, write_text
from fisheye_bev.utils import config
from fisheye_bev.utils.errors import ConfigError, DataError, NumericError, ShapeError, TrainingError
from fisheye_bev.utils.logger import setup_logger

logger = setup_logger(__name__)

OPTIMIZERS = ('gd', 'adam')
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

# slope and bias of the occlusion unit: p(o) = sigmoid(a * (visibility - 0.5) + b)
OCC_INIT = (-8.0, 0.0)

GRAD_CHECK_H_RANGE = (1e-7, 1e-3)
GRAD_CHECK_MAX_PARAMS = 1000
GRAD_FLOOR = 1e-9

LOG_EVERY = 50

PathLike = Union[str, Path]
Params = Dict[str, np.ndarray]
Objective = Callable[[int], Tuple[float, Params]]


# =============================================================================
# Samples and model
# =============================================================================

@dataclass(eq=False)
class TrainSample:
    """
    One precomputed frame.

    Attributes:
        per_camera: (K, C, nx, ny) per-camera BEV features
        counts: (K, nx, ny) per-camera point counts
        gt_class: (nx, ny) class ids
        visibility: (nx, ny) ground-truth visibility weighting the semantic loss
        gt_occ: (nx, ny) occlusion labels in {0, 1}
        occ_visibility: (nx, ny) occlusion-map visibility fed to the occlusion unit
        intrinsic_vectors: (K, 8) normalized intrinsics of the cameras
    """

    per_camera: np.ndarray
    counts: np.ndarray
    gt_class: np.ndarray
    visibility: np.ndarray
    gt_occ: np.ndarray
    occ_visibility: np.ndarray
    intrinsic_vectors: np.ndarray

    def __post_init__(self):
        self.per_camera = np.asarray(self.per_camera, dtype=np.float64)
        self.counts = np.asarray(self.counts)
        self.gt_class = np.asarray(self.gt_class, dtype=np.int64)
        self.visibility = np.asarray(self.visibility, dtype=np.float64)
        self.gt_occ = np.asarray(self.gt_occ, dtype=np.float64)
        self.occ_visibility = np.asarray(self.occ_visibility, dtype=np.float64)
        self.intrinsic_vectors = np.asarray(self.intrinsic_vectors, dtype=np.float64)

        if self.per_camera.ndim != 4:
            raise ShapeError(f"per_camera must be (K, C, nx, ny), got {self.per_camera.shape}")
        k, _, nx, ny = self.per_camera.shape
        if self.counts.shape != (k, nx, ny):
            raise ShapeError(f"counts must be {(k, nx, ny)}, got {self.counts.shape}")
        for name in ('gt_class', 'visibility', 'gt_occ', 'occ_visibility'):
            if getattr(self, name).shape != (nx, ny):
                raise ShapeError(f"{name} must be {(nx, ny)}, got {getattr(self, name).shape}")
        if self.intrinsic_vectors.shape != (k, INTRINSIC_VECTOR_SIZE):
            raise ShapeError(
                f"intrinsic_vectors must be {(k, INTRINSIC_VECTOR_SIZE)}, got {self.intrinsic_vectors.shape}"
            )
        if not np.all(np.isfinite(self.per_camera)):
            raise DataError("Sample features contain non-finite values")

    @property
    def num_cameras(self) -> int:
        return int(self.per_camera.shape[0])

    @property
    def channels(self) -> int:
        return int(self.per_camera.shape[1])


@dataclass(eq=False)
class BevModel:
    """
    Pooling parameters, shared per-cell linear head and occlusion unit.

    Attributes:
        pool: Pooling parameters (strategy included)
        head_W: (classes, channels) head weights shared by every cell
        head_b: (classes,) head bias
        occ_w: (2,) slope and bias of the occlusion unit
    """

    pool: PoolParams
    head_W: np.ndarray
    head_b: np.ndarray
    occ_w: np.ndarray

    def parameters(self, head: bool = True, occlusion: bool = True) -> Params:
        """Trainable arrays by name; the arrays are the model's own, updated in place."""
        params = {f'pool.{name}': getattr(self.pool, name) for name in self.pool.strategy.learnable}
        if head:
            params['head.W'] = self.head_W
            params['head.b'] = self.head_b
        if occlusion:
            params['occ.w'] = self.occ_w
        return params

    def arrays(self) -> Params:
        """Every array of the model, trainable or not."""
        arrays = {
            f'pool.{name}': getattr(self.pool, name)
            for name in ('W', 'w_cell', 'E', 'mu', 'intrinsic_map', 'intrinsic_vectors', 'coverage')
        }
        arrays.update({'head.W': self.head_W, 'head.b': self.head_b, 'occ.w': self.occ_w})
        return arrays

    @classmethod
    def from_arrays(cls, strategy: Union[str, PoolStrategy], arrays: Params) -> 'BevModel':
        def get(name: str) -> np.ndarray:
            if name not in arrays:
                raise DataError(f"Model array '{name}' is missing")
            return np.array(arrays[name], dtype=np.float64)

        pool_params = PoolParams(
            strategy=strategy,
            W=get('pool.W'), w_cell=get('pool.w_cell'), E=get('pool.E'), mu=get('pool.mu'),
            intrinsic_map=get('pool.intrinsic_map'), intrinsic_vectors=get('pool.intrinsic_vectors'),
            coverage=get('pool.coverage') > 0,
        )
        return cls(pool=pool_params, head_W=get('head.W'), head_b=get('head.b'), occ_w=get('occ.w'))

    def copy(self) -> 'BevModel':
        return BevModel(pool=self.pool.copy(), head_W=self.head_W.copy(), head_b=self.head_b.copy(),
                        occ_w=self.occ_w.copy())

    def logits(self, sample: TrainSample) -> Tuple[np.ndarray, np.ndarray]:
        """(pooled, logits), both (., nx, ny)."""
        pooled = pool(sample.per_camera, self.pool, sample.counts)
        logits = np.einsum('kf,fij->kij', self.head_W, pooled) + self.head_b[:, None, None]
        return pooled, logits

    def occlusion_logit(self, occ_visibility: np.ndarray) -> np.ndarray:
        return self.occ_w[0] * (occ_visibility - 0.5) + self.occ_w[1]

    def predict(self, sample: TrainSample, occlusion_unit: bool = True) -> Tuple[np.ndarray, np.ndarray]:
        """
        Per-cell class ids and occlusion probability.

        Without the occlusion unit the occlusion map itself is the prediction.
        """
        _, logits = self.logits(sample)
        pred_class = np.argmax(logits, axis=0).astype(np.uint8)
        if occlusion_unit:
            pred_occ = sigmoid(self.occlusion_logit(sample.occ_visibility))
        else:
            pred_occ = 1.0 - sample.occ_visibility
        return pred_class, pred_occ


def init_model(samples: Sequence[TrainSample], strategy: Union[str, PoolStrategy], head_scale: float = 1.0) -> BevModel:
    """
    Initialize a model from the samples it will be trained on.

    Coverage and per-cell weights come from the summed per-camera counts; the
    head starts as head_scale times the identity (features are class channels).
    """
    if not samples:
        raise ConfigError("At least one training sample is required")
    counts = np.sum([s.counts for s in samples], axis=0)
    mean_features = np.mean([s.per_camera for s in samples], axis=0)
    channels = samples[0].channels
    params = init_pool_params(strategy, counts, channels, samples[0].intrinsic_vectors, mean_features)
    return BevModel(
        pool=params,
        head_W=head_scale * np.eye(NUM_CLASSES, channels),
        head_b=np.zeros(NUM_CLASSES),
        occ_w=np.array(OCC_INIT, dtype=np.float64),
    )


# =============================================================================
# Configuration
# =============================================================================

@dataclass(frozen=True)
class TrainConfig:
    """
    Training settings.

    Attributes:
        strategy: Pooling strategy being trained
        class_weights: Class-weight preset or dash-separated weights
        lam: Weight of the occlusion loss
        lr: Learning rate (0 leaves every parameter unchanged)
        optimizer: 'gd' or 'adam'
        batch_size: Samples per step (all samples when it exceeds their number)
        seed: Batch-selection seed
        head_trainable: Train the class head (False keeps it fixed)
        occlusion: Include the occlusion loss and its unit
        head_scale: Initial head weight (head = head_scale * I)
        workers: Threads for per-sample forward passes
    """

    strategy: PoolStrategy = PoolStrategy.PER_CELL_SENSOR
    class_weights: str = '13-3-1-1'
    lam: float = field(default_factory=lambda: config.LOSS_LAMBDA)
    lr: float = field(default_factory=lambda: config.LEARNING_RATE)
    optimizer: str = 'adam'
    batch_size: int = field(default_factory=lambda: config.BATCH_SIZE)
    seed: int = 0
    head_trainable: bool = True
    occlusion: bool = True
    head_scale: float = 1.0
    workers: int = field(default_factory=lambda: config.WORKERS)

    def __post_init__(self):
        object.__setattr__(self, 'strategy', PoolStrategy.parse(self.strategy))
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"Unknown optimizer '{self.optimizer}'. Expected one of: {', '.join(OPTIMIZERS)}")
        if not (np.isfinite(self.lr) and self.lr >= 0):
            raise ConfigError(f"Learning rate must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if not np.isfinite(self.head_scale):
            raise ConfigError(f"head_scale must be finite, got {self.head_scale}")
        # fail early on a bad weight string
        LossConfig.from_weights(self.class_weights, lam=self.lam)

    @property
    def loss(self) -> LossConfig:
        return LossConfig.from_weights(self.class_weights, lam=self.lam)

    def to_dict(self) -> Dict[str, Any]:
        """Settings that change results (worker count excluded)."""
        return {
            'strategy': self.strategy.value,
            'class_weights': self.class_weights,
            'lam': self.lam,
            'lr': self.lr,
            'optimizer': self.optimizer,
            'batch_size': self.batch_size,
            'seed': self.seed,
            'head_trainable': self.head_trainable,
            'occlusion': self.occlusion,
            'head_scale': self.head_scale,
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any], **overrides) -> 'TrainConfig':
        return cls(**{**payload, **overrides})


# =============================================================================
# Forward / backward
# =============================================================================

@dataclass(frozen=True)
class LossTerms:
    total: float
    semantic: float
    occlusion: float


def sample_gradients(
    model: BevModel,
    sample: TrainSample,
    cfg: TrainConfig,
    loss_cfg: Optional[LossConfig] = None,
) -> Tuple[LossTerms, Params]:
    """
    Loss of one sample and its gradient w.r.t. every trainable parameter.

    semantic: pooled -> head -> softmax -> visibility-masked weighted CE
    occlusion: occlusion-map visibility -> logistic unit -> BCE, scaled by lam
    """
    loss_cfg = loss_cfg or cfg.loss
    grads: Params = {}

    pooled, logits = model.logits(sample)
    if not np.all(np.isfinite(logits)):
        raise NumericError("Class logits are not finite")
    sem, d_logits = semantic_loss(softmax(logits, axis=0), sample.gt_class, sample.visibility, loss_cfg)
    if cfg.head_trainable:
        grads['head.W'] = np.einsum('kij,fij->kf', d_logits, pooled)
        grads['head.b'] = d_logits.sum(axis=(1, 2))
    d_pooled = np.einsum('kf,kij->fij', model.head_W, d_logits)
    pool_grads = pool_backward(model.pool.strategy, sample.per_camera, model.pool, d_pooled, sample.counts)
    for name in model.pool.strategy.learnable:
        grads[f'pool.{name}'] = pool_grads[name]

    occ = 0.0
    if cfg.occlusion:
        centered = sample.occ_visibility - 0.5
        p_occ = sigmoid(model.occlusion_logit(sample.occ_visibility))
        occ, d_z = occlusion_loss(p_occ, sample.gt_occ, loss_cfg.eps, logistic=True)
        grads['occ.w'] = loss_cfg.lam * np.array([np.sum(d_z * centered), np.sum(d_z)])

    total = sem + loss_cfg.lam * occ if cfg.occlusion else sem
    return LossTerms(total=float(total), semantic=float(sem), occlusion=float(occ)), grads


def batch_gradients(
    model: BevModel,
    samples: Sequence[TrainSample],
    cfg: TrainConfig,
    loss_cfg: Optional[LossConfig] = None,
) -> Tuple[float, Params]:
    """
    Mean loss and gradient over a batch.

    Forward passes may run on worker threads; accumulation always follows
    sample order.
    """
    loss_cfg = loss_cfg or cfg.loss
    if cfg.workers > 1 and len(samples) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
            results = list(executor.map(lambda s: sample_gradients(model, s, cfg, loss_cfg), samples))
    else:
        results = [sample_gradients(model, s, cfg, loss_cfg) for s in samples]

    names = model.parameters(cfg.head_trainable, cfg.occlusion)
    total = 0.0
    grads = {name: np.zeros_like(value, dtype=np.float64) for name, value in names.items()}
    for terms, sample_grads in results:
        total += terms.total
        for name in grads:
            grads[name] += sample_grads[name]
    n = len(samples)
    return total / n, {name: value / n for name, value in grads.items()}


# =============================================================================
# Optimizers
# =============================================================================

class GradientDescent:
    """Plain gradient descent: p -= lr * g."""

    name = 'gd'

    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: Params, grads: Params) -> None:
        for name, value in params.items():
            value -= self.lr * grads[name]

    def state_dict(self) -> Params:
        return {}

    def load_state_dict(self, state: Params) -> None:
        pass


class Adam:
    """
    Adam with bias correction.

    State: first/second moment per parameter and the step count t.
    """

    name = 'adam'

    def __init__(self, lr: float, betas: Tuple[float, float] = ADAM_BETAS, eps: float = ADAM_EPS):
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.m: Params = {}
        self.v: Params = {}
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        beta1, beta2 = self.betas
        self.t += 1
        for name, value in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(value))
            v = self.v.setdefault(name, np.zeros_like(value))
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            m_hat = m / (1.0 - beta1 ** self.t)
            v_hat = v / (1.0 - beta2 ** self.t)
            value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> Params:
        state = {'t': np.array([self.t], dtype=np.int64)}
        state.update({f'm.{name}': value for name, value in self.m.items()})
        state.update({f'v.{name}': value for name, value in self.v.items()})
        return state

    def load_state_dict(self, state: Params) -> None:
        self.t = int(np.asarray(state.get('t', [0])).ravel()[0])
        self.m = {key[2:]: np.array(value, dtype=np.float64) for key, value in state.items() if key.startswith('m.')}
        self.v = {key[2:]: np.array(value, dtype=np.float64) for key, value in state.items() if key.startswith('v.')}


Optimizer = Union[GradientDescent, Adam]


def make_optimizer(name: str, lr: float) -> Optimizer:
    if name == 'gd':
        return GradientDescent(lr)
    if name == 'adam':
        return Adam(lr)
    raise ConfigError(f"Unknown optimizer '{name}'. Expected one of: {', '.join(OPTIMIZERS)}")


# =============================================================================
# Training loop
# =============================================================================

@dataclass(eq=False)
class TrainState:
    """
    Attributes:
        model: Current parameters
        step: Steps taken
        loss_history: Batch loss before each step (len == step)
        rng_seed: Batch-selection seed
        optimizer: Optimizer with its state
    """

    model: BevModel
    step: int
    loss_history: List[float]
    rng_seed: int
    optimizer: Optimizer


def batch_indices(num_samples: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Sorted sample indices of one step; depends only on (seed, step)."""
    if batch_size >= num_samples:
        return np.arange(num_samples)
    rng = np.random.default_rng([seed, step])
    return np.sort(rng.choice(num_samples, size=batch_size, replace=False))


def minimize(
    objective: Objective,
    params: Params,
    optimizer: Optimizer,
    steps: int,
    start_step: int = 0,
) -> List[float]:
    """
    Run optimizer steps on an objective(step) -> (loss, grads).

    Returns:
        Loss before each step

    Raises:
        TrainingError: non-finite loss or parameter, with the step index
    """
    history: List[float] = []
    for step in range(start_step, start_step + steps):
        try:
            loss, grads = objective(step)
        except TrainingError:
            raise
        except NumericError as e:
            raise TrainingError(f"Objective failed at step {step}: {e}", step) from e
        if not np.isfinite(loss):
            raise TrainingError(f"Loss diverged at step {step} (loss={loss})", step)
        history.append(float(loss))
        optimizer.step(params, grads)
        bad = [name for name, value in params.items() if not np.all(np.isfinite(value))]
        if bad:
            raise TrainingError(f"Parameters {', '.join(bad)} became non-finite at step {step}", step)
        if (step + 1) % LOG_EVERY == 0:
            logger.info(f"Step {step + 1}: loss={loss:.6f}")
    return history


def train(
    samples: Sequence[TrainSample],
    cfg: TrainConfig,
    steps: int,
    state: Optional[TrainState] = None,
) -> TrainState:
    """
    Train, or continue training, on precomputed samples.

    Args:
        samples: Training samples (all with the same grid and cameras)
        cfg: Training settings
        steps: Steps to take (>= 1)
        state: State to continue from; a fresh model is initialized otherwise

    Returns:
        The updated TrainState

    Raises:
        ConfigError: steps < 1 or no samples
        TrainingError: divergence
    """
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    if not samples:
        raise ConfigError("At least one training sample is required")

    if state is None:
        state = TrainState(
            model=init_model(samples, cfg.strategy, cfg.head_scale),
            step=0,
            loss_history=[],
            rng_seed=cfg.seed,
            optimizer=make_optimizer(cfg.optimizer, cfg.lr),
        )
    params = state.model.parameters(cfg.head_trainable, cfg.occlusion)
    loss_cfg = cfg.loss

    def objective(step: int) -> Tuple[float, Params]:
        batch = [samples[i] for i in batch_indices(len(samples), cfg.batch_size, state.rng_seed, step)]
        return batch_gradients(state.model, batch, cfg, loss_cfg)

    logger.info(
        f"Training {cfg.strategy.value} with {cfg.optimizer} (lr={cfg.lr}) on {len(samples)} sample(s), "
        f"steps {state.step}..{state.step + steps}"
    )
    history = minimize(objective, params, state.optimizer, steps, start_step=state.step)
    state.loss_history.extend(history)
    state.step += steps
    logger.info(f"Training finished at step {state.step}: loss {history[0]:.6f} -> {history[-1]:.6f}")
    return state


def loss_curve_frame(history: Sequence[float]) -> pd.DataFrame:
    return pd.DataFrame({'step': np.arange(len(history)), 'loss': np.asarray(history, dtype=np.float64)})


def loss_curve_text(history: Sequence[float]) -> str:
    """Tab-separated step/loss table with round-trip float precision."""
    return loss_curve_frame(history).to_csv(sep='\t', index=False, float_format='%.17g')


# =============================================================================
# Gradient check
# =============================================================================

@dataclass(frozen=True)
class GradCheckResult:
    max_error: float
    parameter: str
    checked: int


def relative_error(analytic: float, numeric: float) -> float:
    """|a - n| / max(|a|, |n|); 0 when both are below GRAD_FLOOR."""
    scale = max(abs(analytic), abs(numeric))
    if scale < GRAD_FLOOR:
        return 0.0
    return abs(analytic - numeric) / scale


def grad_check(
    objective: Callable[[], float],
    params: Params,
    analytic: Params,
    h: float = 1e-5,
    max_params: int = GRAD_CHECK_MAX_PARAMS,
    seed: int = 0,
) -> GradCheckResult:
    """
    Compare analytic gradients with central differences.

    Every scalar is perturbed in place (and restored); above max_params scalars
    a seeded random subset is checked.

    Args:
        objective: Loss at the current parameter values
        params: Arrays perturbed in place
        analytic: Gradient arrays with the same names and shapes
        h: Perturbation, within [1e-7, 1e-3]

    Returns:
        GradCheckResult with the largest relative error and the offending
        parameter as "name[i, j, ...]"
    """
    lo, hi = GRAD_CHECK_H_RANGE
    if not lo <= h <= hi:
        raise ConfigError(f"h must lie in [{lo}, {hi}], got {h}")
    names = list(params)
    for name in names:
        if np.shape(analytic[name]) != params[name].shape:
            raise ShapeError(f"Analytic gradient '{name}' is {np.shape(analytic[name])}, expected {params[name].shape}")

    sizes = np.array([params[name].size for name in names], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    if total > max_params:
        picks = np.sort(np.random.default_rng(seed).choice(total, size=max_params, replace=False))
    else:
        picks = np.arange(total)

    worst, where = 0.0, ''
    for flat in picks:
        slot = int(np.searchsorted(offsets, flat, side='right')) - 1
        name = names[slot]
        array = params[name]
        index = np.unravel_index(int(flat - offsets[slot]), array.shape)
        original = array[index]
        array[index] = original + h
        plus = objective()
        array[index] = original - h
        minus = objective()
        array[index] = original
        numeric = (plus - minus) / (2.0 * h)
        error = relative_error(float(np.asarray(analytic[name])[index]), numeric)
        if error > worst or not where:
            worst, where = error, f"{name}[{', '.join(str(int(i)) for i in index)}]"

    logger.debug(f"Gradient check over {len(picks)} scalar(s): max relative error {worst:.3g} at {where}")
    return GradCheckResult(max_error=worst, parameter=where, checked=len(picks))


def check_model_gradients(
    model: BevModel,
    samples: Sequence[TrainSample],
    cfg: TrainConfig,
    h: float = 1e-5,
    max_params: int = GRAD_CHECK_MAX_PARAMS,
    seed: int = 0,
) -> GradCheckResult:
    """grad_check of the batch loss over every trainable parameter of a model."""
    _, analytic = batch_gradients(model, samples, cfg)
    params = model.parameters(cfg.head_trainable, cfg.occlusion)
    return grad_check(lambda: batch_gradients(model, samples, cfg)[0], params, analytic, h, max_params, seed)


# =============================================================================
# Samples from scenes, fixtures, ablations
# =============================================================================

def build_sample(
    scene: Scene,
    rig: CameraRig,
    pipeline_cfg: PipelineConfig,
    feature_noise: float = 0.0,
    seed: int = 0,
    workers: Optional[int] = None,
) -> TrainSample:
    """
    Lift one scene into a training sample.

    Per-camera features are mean one-hot class vectors per cell; feature_noise
    adds seeded Gaussian noise on the cells each camera covers.
    """
    _, grid, _ = lift_frame(scene, rig, replace(pipeline_cfg, reduce='mean'), workers=workers)
    gt = gt_occlusion(scene, rig, pipeline_cfg.visibility_samples)
    occ = occlusion_map(grid.counts, pipeline_cfg.kernel_radius, pipeline_cfg.tau)

    per_camera = grid.per_camera
    if feature_noise > 0:
        covered = (grid.per_camera_counts > 0)[:, None]
        noise = np.random.default_rng(seed).standard_normal(per_camera.shape)
        per_camera = per_camera + feature_noise * noise * covered

    return TrainSample(
        per_camera=per_camera,
        counts=grid.per_camera_counts,
        gt_class=scene.semantic,
        visibility=gt.visibility,
        gt_occ=gt.p_occluded,
        occ_visibility=occ.visibility,
        intrinsic_vectors=intrinsic_vectors(rig),
    )


def build_samples(
    scenes: Sequence[Scene],
    rig: CameraRig,
    pipeline_cfg: PipelineConfig,
    feature_noise: float = 0.0,
    seed: int = 0,
    workers: Optional[int] = None,
) -> List[TrainSample]:
    return [build_sample(scene, rig, pipeline_cfg, feature_noise, seed + i, workers) for i, scene in enumerate(scenes)]


def train_scenes(
    scenes: Sequence[Scene],
    rig: CameraRig,
    pipeline_cfg: PipelineConfig,
    cfg: TrainConfig,
    steps: int,
    feature_noise: float = 0.0,
) -> TrainState:
    """Lift a scene set and train on it."""
    samples = build_samples(scenes, rig, pipeline_cfg, feature_noise, cfg.seed, cfg.workers)
    return train(samples, cfg, steps)


NOISY_OVERLAP_SHAPE = (8, 8)
NOISY_OVERLAP_COVERED_ROWS = 6
NOISY_OVERLAP_B_FIRST_COL = 2
NOISY_OVERLAP_COUNT = 4


def make_noisy_overlap_fixture(seed: int, num_samples: int = 4, nu: float = 0.5,
                               jitter: float = 0.1) -> List[TrainSample]:
    """
    Two cameras over an 8x8 grid.

    Camera A covers rows 0-5 with clean one-hot features. Camera B covers rows
    0-5, columns 2-7 with (1 - nu) * e_gt + nu * e_wrong + U(-jitter, jitter).
    Rows 6-7 are seen by no camera: visibility 0 and occluded.
    """
    if not 0.0 <= nu <= 1.0:
        raise ConfigError(f"nu must lie in [0, 1], got {nu}")
    rng = np.random.default_rng(seed)
    nx, ny = NOISY_OVERLAP_SHAPE
    rows, first_col = NOISY_OVERLAP_COVERED_ROWS, NOISY_OVERLAP_B_FIRST_COL
    eye = np.eye(NUM_CLASSES)

    coverage = np.zeros((2, nx, ny), dtype=bool)
    coverage[0, :rows, :] = True
    coverage[1, :rows, first_col:] = True
    visible = coverage.any(axis=0)

    samples = []
    for _ in range(num_samples):
        gt_class = rng.integers(1, NUM_CLASSES, size=(nx, ny))
        wrong = (gt_class + rng.integers(1, NUM_CLASSES, size=(nx, ny))) % NUM_CLASSES
        clean = eye[gt_class].transpose(2, 0, 1)
        noisy = (1.0 - nu) * clean + nu * eye[wrong].transpose(2, 0, 1)
        noisy = noisy + rng.uniform(-jitter, jitter, size=noisy.shape)

        per_camera = np.stack([clean, noisy]) * coverage[:, None]
        samples.append(TrainSample(
            per_camera=per_camera,
            counts=NOISY_OVERLAP_COUNT * coverage.astype(np.int64),
            gt_class=gt_class,
            visibility=visible.astype(np.float64),
            gt_occ=(~visible).astype(np.float64),
            occ_visibility=visible.astype(np.float64),
            intrinsic_vectors=np.tile(np.eye(1, INTRINSIC_VECTOR_SIZE, INTRINSIC_VECTOR_SIZE - 1), (2, 1)),
        ))
    return samples


def noisy_overlap_config(**overrides) -> TrainConfig:
    """Settings the noisy-overlap fixture is trained with: fixed 4*I head, per-cell weights, gd."""
    base = dict(strategy=PoolStrategy.PER_CELL_SENSOR, class_weights='1-1-1-1', lam=0.1, lr=5.0,
                optimizer='gd', batch_size=4, head_trainable=False, head_scale=4.0, workers=1)
    base.update(overrides)
    return TrainConfig(**base)


def overlap_cells() -> np.ndarray:
    """Mask of the cells both fixture cameras cover."""
    mask = np.zeros(NOISY_OVERLAP_SHAPE, dtype=bool)
    mask[:NOISY_OVERLAP_COVERED_ROWS, NOISY_OVERLAP_B_FIRST_COL:] = True
    return mask


def evaluate_model(model: BevModel, samples: Sequence[TrainSample], occlusion_unit: bool = True) -> EvalReport:
    accumulator = EvalAccumulator()
    for sample in samples:
        pred_class, pred_occ = model.predict(sample, occlusion_unit)
        accumulator.add(pred_class, pred_occ, sample.gt_class, sample.gt_occ)
    return accumulator.report()


DEFAULT_VARIANTS: Dict[str, Dict[str, Any]] = {
    'weights-13-3-1-1': {'class_weights': '13-3-1-1'},
    'weights-1-1-1-1': {'class_weights': '1-1-1-1'},
    'no-occlusion-loss': {'occlusion': False},
    'pool-weighted-sum': {'strategy': PoolStrategy.WEIGHTED_SUM},
    'pool-per-cell-sensor': {'strategy': PoolStrategy.PER_CELL_SENSOR},
    'pool-intrinsic-embed': {'strategy': PoolStrategy.INTRINSIC_EMBED},
}


def run_ablation(
    samples: Sequence[TrainSample],
    base_cfg: TrainConfig,
    variants: Optional[Dict[str, Dict[str, Any]]] = None,
    steps: int = 100,
    eval_samples: Optional[Sequence[TrainSample]] = None,
) -> Dict[str, EvalReport]:
    """
    Train one model per variant (overrides of base_cfg) from the same
    initialization and evaluate each.

    Returns:
        EvalReport per variant name, in variant order
    """
    variants = DEFAULT_VARIANTS if variants is None else variants
    eval_samples = samples if eval_samples is None else eval_samples
    reports: Dict[str, EvalReport] = {}
    for name, overrides in variants.items():
        cfg = replace(base_cfg, **overrides)
        state = train(samples, cfg, steps)
        reports[name] = evaluate_model(state.model, eval_samples, cfg.occlusion)
        logger.info(f"Ablation '{name}': mIoU={reports[name].miou:.3f}, final loss {state.loss_history[-1]:.6f}")
    return reports


def ablation_frame(reports: Dict[str, EvalReport]) -> pd.DataFrame:
    """One row per variant, one column per score."""
    rows = {name: report_frame(report).set_index('score')['iou'] for name, report in reports.items()}
    return pd.DataFrame(rows).T


# =============================================================================
# Checkpoints
# =============================================================================

MANIFEST = 'manifest.json'


def save_checkpoint(state: TrainState, cfg: TrainConfig, directory: PathLike) -> Path:
    """
    Write model arrays, optimizer state and loss history as tensor files plus
    manifest.json (step, seed, config_hash, strategy).
    """
    directory = Path(directory)
    for name, value in state.model.arrays().items():
        write_tensor(directory / f"model.{name}.fbvt", np.asarray(value, dtype=np.float64))
    optimizer_state = state.optimizer.state_dict()
    for name, value in optimizer_state.items():
        write_tensor(directory / f"optim.{name}.fbvt", value)
    write_tensor(directory / "loss_history.fbvt", np.asarray(state.loss_history, dtype=np.float64))

    manifest = {
        'step': state.step,
        'seed': state.rng_seed,
        'config_hash': config_hash(cfg.to_dict()),
        'strategy': state.model.pool.strategy.value,
        'optimizer': state.optimizer.name,
        'config': cfg.to_dict(),
        'model_arrays': sorted(state.model.arrays()),
        'optimizer_arrays': sorted(optimizer_state),
    }
    write_text(directory / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    logger.info(f"Checkpoint at step {state.step} written to {directory}")
    return directory


def load_checkpoint(directory: PathLike) -> Tuple[TrainState, TrainConfig]:
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        DataError: missing or malformed manifest or tensor files
    """
    directory = Path(directory)
    manifest_path = directory / MANIFEST
    try:
        manifest = json.loads(manifest_path.read_text(encoding='utf-8'))
    except OSError as e:
        raise DataError(f"{manifest_path}: cannot read checkpoint manifest ({e.strerror})")
    except json.JSONDecodeError as e:
        raise DataError(f"{manifest_path}: invalid JSON ({e.msg})")
    for key in ('step', 'seed', 'config_hash', 'strategy', 'config', 'model_arrays', 'optimizer_arrays'):
        if key not in manifest:
            raise DataError(f"{manifest_path}: manifest lacks '{key}'")

    cfg = TrainConfig.from_dict(manifest['config'])
    if config_hash(cfg.to_dict()) != manifest['config_hash']:
        raise DataError(f"{manifest_path}: config_hash does not match the stored configuration")

    arrays = {name: read_tensor(directory / f"model.{name}.fbvt") for name in manifest['model_arrays']}
    model = BevModel.from_arrays(manifest['strategy'], arrays)
    optimizer = make_optimizer(cfg.optimizer, cfg.lr)
    optimizer.load_state_dict({name: read_tensor(directory / f"optim.{name}.fbvt")
                               for name in manifest['optimizer_arrays']})
    history = read_tensor(directory / "loss_history.fbvt")
    if history.size != manifest['step']:
        raise DataError(f"{directory}: loss history has {history.size} entries for step {manifest['step']}")

    state = TrainState(model=model, step=int(manifest['step']), loss_history=[float(x) for x in history],
                       rng_seed=int(manifest['seed']), optimizer=optimizer)
    logger.info(f"Checkpoint at step {state.step} loaded from {directory}")
    return state, cfg
