"""Multilayer perceptron over a flat parameter vector with exact reverse-mode gradients.

Parameters live in one float64 vector in canonical layer-major order: for each
layer l (hidden layers first, output head last) the weight matrix W_l of shape
(out, in) flattened row-major, followed by the bias b_l. All forward and
backward passes are vectorized over data points but the math is per-example.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionError, InvalidInputError, NumericDomainError

VAR_FLOOR = 1e-6

ACTIVATIONS = ("tanh", "relu")
HEADS = ("scalar", "mean_variance")


@dataclass(frozen=True)
class MlpConfig:
    """Network shape: input dim, hidden widths, output head and activation.

    head "scalar" emits a single mean; "mean_variance" emits a mean and a raw
    value mapped to a positive variance via softplus + VAR_FLOOR.
    """

    input_dim: int
    hidden: tuple
    head: str = "scalar"
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        if self.input_dim < 1:
            raise InvalidInputError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(w < 1 for w in self.hidden):
            raise InvalidInputError(f"hidden widths must all be >= 1, got {self.hidden}")
        if self.head not in HEADS:
            raise InvalidInputError(f"unknown head {self.head!r}")
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}")

    @property
    def raw_outputs(self):
        return 2 if self.head == "mean_variance" else 1

    @property
    def layer_dims(self):
        return (self.input_dim,) + self.hidden + (self.raw_outputs,)


@dataclass
class NetOutput:
    """Predictive mean, plus variance when the network has a variance head."""

    mean: float
    var: float = None


class GradTarget(Enum):
    """Scalar functions of the network whose parameter gradient is requested."""

    OUTPUT_MEAN = "output_mean"
    MSE_LOSS = "mse_loss"
    GAUSSIAN_NLL = "gaussian_nll"
    STD_SQ_RESIDUAL = "std_sq_residual"

    @property
    def needs_label(self):
        return self is not GradTarget.OUTPUT_MEAN

    @property
    def needs_variance(self):
        return self in (GradTarget.GAUSSIAN_NLL, GradTarget.STD_SQ_RESIDUAL)


def param_count(config):
    dims = config.layer_dims
    return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))


def init_params(config, rng):
    """Weights ~ N(0, 1/fan_in) per layer, biases exactly zero."""
    dims = config.layer_dims
    parts = []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        w = rng.gen.standard_normal((fan_out, fan_in)) / math.sqrt(fan_in)
        parts.append(w.ravel())
        parts.append(np.zeros(fan_out))
    return np.concatenate(parts)


def split_params(config, theta):
    """View the flat vector as a list of (W, b) per layer. No copies."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1 or theta.size != param_count(config):
        raise DimensionError(
            f"parameter vector has length {theta.size}, expected {param_count(config)}"
        )
    dims = config.layer_dims
    layers = []
    pos = 0
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        w = theta[pos : pos + fan_in * fan_out].reshape(fan_out, fan_in)
        pos += fan_in * fan_out
        b = theta[pos : pos + fan_out]
        pos += fan_out
        layers.append((w, b))
    return layers


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _forward_pass(config, layers, x_batch):
    """Forward through all layers; returns raw head outputs and the per-layer
    (pre-activation, activation) cache needed by the backward pass."""
    act = np.tanh if config.activation == "tanh" else lambda z: np.maximum(z, 0.0)
    a = x_batch
    pre_acts = []
    activations = [a]
    for w, b in layers[:-1]:
        z = a @ w.T + b
        a = act(z)
        pre_acts.append(z)
        activations.append(a)
    w_out, b_out = layers[-1]
    raw = a @ w_out.T + b_out
    return raw, pre_acts, activations


def forward_batch(config, theta, x_batch):
    """Vectorized forward pass. Returns (mu, v) with v = None for scalar heads."""
    x_batch = np.asarray(x_batch, dtype=np.float64)
    if x_batch.ndim != 2 or x_batch.shape[1] != config.input_dim:
        raise DimensionError(
            f"inputs have shape {x_batch.shape}, expected (*, {config.input_dim})"
        )
    layers = split_params(config, theta)
    raw, _, _ = _forward_pass(config, layers, x_batch)
    mu = raw[:, 0]
    if config.head == "mean_variance":
        v = _softplus(raw[:, 1]) + VAR_FLOOR
        return mu, v
    return mu, None


def forward(config, theta, x):
    """Single-example forward pass."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    mu, v = forward_batch(config, theta, x[None, :])
    if v is None:
        return NetOutput(mean=float(mu[0]))
    return NetOutput(mean=float(mu[0]), var=float(v[0]))


def _target_values_and_seeds(target, mu, v, y):
    """Per-example target value and its derivatives w.r.t. (mu, v).

    v is None for scalar heads; targets that divide by the variance then
    require a variance head and raise otherwise.
    """
    if target.needs_label:
        if y is None:
            raise InvalidInputError(f"target {target.value} requires a label y")
        y = np.asarray(y, dtype=np.float64)
    if target.needs_variance:
        if v is None:
            raise InvalidInputError(
                f"target {target.value} requires a variance head"
            )
        if np.any(v <= 0):
            raise NumericDomainError("variance must be positive")

    if target is GradTarget.OUTPUT_MEAN:
        return mu.copy(), np.ones_like(mu), None
    r = y - mu
    if target is GradTarget.MSE_LOSS:
        return r * r, -2.0 * r, np.zeros_like(mu) if v is not None else None
    if target is GradTarget.GAUSSIAN_NLL:
        vals = 0.5 * np.log(2.0 * np.pi * v) + r * r / (2.0 * v)
        return vals, -r / v, 0.5 / v - r * r / (2.0 * v * v)
    # standardized squared residual (y - mu)^2 / v
    vals = r * r / v
    return vals, -2.0 * r / v, -r * r / (v * v)


def _backward_pass(config, layers, pre_acts, activations, d_raw):
    """Accumulate the summed gradient over the batch given output seeds d_raw."""
    grads = [None] * len(layers)
    delta = d_raw
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        a_prev = activations[i]
        gw = delta.T @ a_prev
        gb = delta.sum(axis=0)
        grads[i] = (gw, gb)
        if i > 0:
            da = delta @ w
            z = pre_acts[i - 1]
            if config.activation == "tanh":
                delta = da * (1.0 - np.tanh(z) ** 2)
            else:
                delta = da * (z > 0)
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])


def batch_target_value_grad(config, theta, x_batch, y_batch, target):
    """Per-example target values and the gradient of their SUM w.r.t. theta.

    One vectorized forward/backward pass over the whole batch; this is the
    workhorse behind both pretraining and the log-posterior gradient.
    """
    x_batch = np.asarray(x_batch, dtype=np.float64)
    if x_batch.ndim != 2 or x_batch.shape[1] != config.input_dim:
        raise DimensionError(
            f"inputs have shape {x_batch.shape}, expected (*, {config.input_dim})"
        )
    layers = split_params(config, theta)
    raw, pre_acts, activations = _forward_pass(config, layers, x_batch)
    mu = raw[:, 0]
    v = _softplus(raw[:, 1]) + VAR_FLOOR if config.head == "mean_variance" else None
    values, d_mu, d_v = _target_values_and_seeds(target, mu, v, y_batch)
    d_raw = np.zeros_like(raw)
    d_raw[:, 0] = d_mu
    if config.head == "mean_variance" and d_v is not None:
        d_raw[:, 1] = d_v * _sigmoid(raw[:, 1])  # chain through softplus
    grad = _backward_pass(config, layers, pre_acts, activations, d_raw)
    return values, grad


def scalar_target(config, theta, x, y, target):
    """Scalar function of the network at one example (see GradTarget)."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    y_arr = None if y is None else np.asarray([y], dtype=np.float64)
    layers = split_params(config, theta)
    raw, _, _ = _forward_pass(config, layers, x)
    mu = raw[:, 0]
    v = _softplus(raw[:, 1]) + VAR_FLOOR if config.head == "mean_variance" else None
    values, _, _ = _target_values_and_seeds(target, mu, v, y_arr)
    return float(values[0])


def backprop_param_grad(config, theta, x, y, target):
    """Exact gradient of scalar_target w.r.t. every parameter (length n)."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    y_arr = None if y is None else np.asarray([y], dtype=np.float64)
    _, grad = batch_target_value_grad(config, theta, x, y_arr, target)
    return grad
