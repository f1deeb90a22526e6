"""SGD pretraining with stochastic weight averaging.

The anchor for subspace construction is the SWA mean: the arithmetic mean of
parameter snapshots collected at a fixed step interval after a configurable
fraction of training. Snapshot deviations about that mean feed the SGD-PCA
baseline.
"""

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InvalidInputError, TrainingDivergedError
from .network import GradTarget, batch_target_value_grad, init_params, param_count
from .numerics import RngStream

_CKPT_MAGIC = b"ASCK"
_CKPT_VERSION = 1


@dataclass
class TrainHyper:
    epochs: int
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    swa_start: float = 0.75
    swa_interval: int = None  # steps between snapshots; None = once per epoch
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidInputError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidInputError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.swa_start < 1.0:
            raise InvalidInputError(f"swa_start must be in (0, 1), got {self.swa_start}")
        if self.swa_interval is not None and self.swa_interval < 1:
            raise InvalidInputError("swa_interval must be >= 1 when given")


@dataclass
class Trajectory:
    """Post-SWA-start snapshots, the final iterate, and their SWA mean."""

    snapshots: list
    final: np.ndarray
    swa_mean: np.ndarray = field(default=None)

    def __post_init__(self):
        if not self.snapshots:
            raise InvalidInputError("trajectory needs at least one snapshot")
        if self.swa_mean is None:
            self.swa_mean = np.mean(np.asarray(self.snapshots), axis=0)


def training_target(config):
    return GradTarget.MSE_LOSS if config.head == "scalar" else GradTarget.GAUSSIAN_NLL


def mean_training_loss(config, theta, dataset):
    values, _ = batch_target_value_grad(
        config, theta, dataset.x, dataset.y, training_target(config)
    )
    return float(values.mean())


def train_map(config, dataset, hyper):
    """Minibatch SGD with momentum on the per-head training loss.

    Snapshots are taken every swa_interval steps once the global step passes
    swa_start x total steps. Raises TrainingDivergedError (carrying the last
    finite iterate) on NaN loss, and if the final training loss did not improve
    on the initial one.
    """
    if dataset.n < 1:
        raise InvalidInputError("dataset is empty")
    target = training_target(config)
    rng = RngStream(hyper.seed, stream=0)
    theta = init_params(config, rng)
    velocity = np.zeros_like(theta)

    steps_per_epoch = math.ceil(dataset.n / hyper.batch_size)
    total_steps = hyper.epochs * steps_per_epoch
    swa_start_step = int(math.floor(total_steps * hyper.swa_start))
    interval = hyper.swa_interval if hyper.swa_interval is not None else steps_per_epoch

    init_loss = mean_training_loss(config, theta, dataset)
    snapshots = []
    last_finite = theta.copy()
    step = 0
    for _ in range(hyper.epochs):
        perm = rng.gen.permutation(dataset.n)
        for b in range(steps_per_epoch):
            idx = perm[b * hyper.batch_size : (b + 1) * hyper.batch_size]
            values, grad = batch_target_value_grad(
                config, theta, dataset.x[idx], dataset.y[idx], target
            )
            grad /= idx.size
            if not (np.isfinite(values).all() and np.isfinite(grad).all()):
                raise TrainingDivergedError(
                    f"non-finite loss/gradient at step {step}", last_params=last_finite
                )
            velocity = hyper.momentum * velocity - hyper.learning_rate * grad
            theta = theta + velocity
            step += 1
            if np.isfinite(theta).all():
                last_finite = theta
            else:
                raise TrainingDivergedError(
                    f"non-finite parameters at step {step}", last_params=last_finite
                )
            if step > swa_start_step and (step - swa_start_step) % interval == 0:
                snapshots.append(theta.copy())
    if not snapshots:
        snapshots.append(theta.copy())
    final_loss = mean_training_loss(config, theta, dataset)
    if not final_loss <= init_loss:
        raise TrainingDivergedError(
            f"training loss worsened: init {init_loss:.6g} -> final {final_loss:.6g}",
            last_params=theta,
        )
    return Trajectory(snapshots=snapshots, final=theta)


def iterate_deviations(traj, m):
    """Rows = (snapshot_t - swa_mean) for the last m snapshots."""
    if m < 1:
        raise InvalidInputError(f"m must be >= 1, got {m}")
    if m > len(traj.snapshots):
        raise InvalidInputError(
            f"requested {m} deviations but only {len(traj.snapshots)} snapshots exist"
        )
    return np.asarray(traj.snapshots[-m:]) - traj.swa_mean


def config_digest(config):
    """Stable hash of the network shape, stored in checkpoints."""
    text = f"{config.input_dim}|{config.hidden}|{config.head}|{config.activation}"
    return hashlib.sha256(text.encode()).digest()


def save_checkpoint(path, config, theta):
    theta = np.asarray(theta, dtype=np.float64)
    n = param_count(config)
    if theta.size != n:
        raise DimensionError(f"theta length {theta.size} != param count {n}")
    header = struct.pack("<4sIQ32s", _CKPT_MAGIC, _CKPT_VERSION, n, config_digest(config))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(theta, dtype="<f8").tobytes())


def load_checkpoint(path, config):
    header_size = struct.calcsize("<4sIQ32s")
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < header_size:
        raise InvalidInputError(f"{path}: truncated checkpoint")
    magic, version, n, digest = struct.unpack("<4sIQ32s", blob[:header_size])
    if magic != _CKPT_MAGIC:
        raise InvalidInputError(f"{path}: not a checkpoint file")
    if version != _CKPT_VERSION:
        raise InvalidInputError(f"{path}: unsupported version {version}")
    if n != param_count(config):
        raise DimensionError(
            f"{path}: checkpoint has {n} params, config expects {param_count(config)}"
        )
    if digest != config_digest(config):
        raise InvalidInputError(f"{path}: checkpoint was written for a different network")
    if len(blob) != header_size + 8 * n:
        raise InvalidInputError(f"{path}: truncated parameter payload")
    return np.frombuffer(blob, dtype="<f8", offset=header_size).copy()
