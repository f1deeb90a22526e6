"""Synthetic benchmark generation, CSV ingestion, standardization, splitting."""

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import CsvParseError, InvalidInputError, ScalerError


@dataclass
class Scaler:
    """Per-column standardization statistics fit on a training split."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    def transform_x(self, x):
        return (x - self.x_mean) / self.x_std

    def transform_y(self, y):
        return (y - self.y_mean) / self.y_std

    def inverse_x(self, x):
        return x * self.x_std + self.x_mean

    def inverse_y(self, y):
        return y * self.y_std + self.y_mean

    def inverse_var(self, v):
        """De-standardize a predictive variance (Jacobian of the affine map)."""
        return v * self.y_std**2


@dataclass
class Dataset:
    """Feature matrix (N, p), target vector (N,), optional fitted scaler."""

    x: np.ndarray
    y: np.ndarray
    name: str = ""
    feature_names: tuple = ()
    scaler: Scaler = field(default=None)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.ndim != 2 or self.y.ndim != 1 or self.x.shape[0] != self.y.shape[0]:
            raise InvalidInputError(
                f"features {self.x.shape} and targets {self.y.shape} do not align"
            )
        if np.isnan(self.x).any() or np.isnan(self.y).any():
            raise InvalidInputError("dataset contains NaN values")

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]


def sine_curve(x):
    """Noise-free generating function of the simulation benchmark."""
    return np.sin(4.0 * np.pi * x) + np.sin(7.0 * np.pi * x)


def gen_sine(n, noise_std, rng):
    """x ~ Uniform[0, 1]; y = sin(4 pi x) + sin(7 pi x) + N(0, noise_std^2)."""
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    if noise_std < 0:
        raise InvalidInputError(f"noise_std must be >= 0, got {noise_std}")
    x = rng.gen.uniform(0.0, 1.0, size=int(n))
    y = sine_curve(x)
    if noise_std > 0:
        y = y + rng.gen.standard_normal(int(n)) * noise_std
    return Dataset(x=x[:, None], y=y, name="sine", feature_names=("x",))


def _constant_columns(x, names):
    return [names[j] for j in range(x.shape[1]) if x[:, j].std() == 0.0]


def load_csv(path, target_column):
    """Load a numeric CSV with header; features are all non-target columns in order."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInputError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if target_column not in header:
            raise InvalidInputError(
                f"{path}: target column {target_column!r} not in header {header}"
            )
        target_idx = header.index(target_column)
        rows = []
        for i, row in enumerate(reader, start=2):  # 1-based, header is row 1
            if len(row) != len(header):
                raise CsvParseError(
                    f"{path}: row {i} has {len(row)} cells, expected {len(header)}",
                    row=i,
                )
            parsed = []
            for j, cell in enumerate(row, start=1):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise CsvParseError(
                        f"{path}: cannot parse cell at row {i}, column {j} "
                        f"({header[j - 1]!r}): {cell!r}",
                        row=i,
                        column=j,
                    ) from None
            rows.append(parsed)
    if not rows:
        raise InvalidInputError(f"{path}: no data rows (header only)")
    arr = np.asarray(rows, dtype=np.float64)
    y = arr[:, target_idx]
    x = np.delete(arr, target_idx, axis=1)
    feat_names = tuple(h for h in header if h != target_column)
    const = _constant_columns(x, feat_names)
    if const:
        raise ScalerError(f"{path}: constant feature column(s) {const} cannot be scaled")
    name = os.path.splitext(os.path.basename(path))[0]
    return Dataset(x=x, y=y, name=name, feature_names=feat_names)


def split(dataset, test_fraction, rng):
    """Random disjoint train/test partition; test size = round(N * fraction), min 1."""
    if not 0.0 < test_fraction < 1.0:
        raise InvalidInputError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if dataset.n < 2:
        raise InvalidInputError(f"need at least 2 points to split, got {dataset.n}")
    n_test = int(math.floor(dataset.n * test_fraction + 0.5))  # round half up
    n_test = min(max(n_test, 1), dataset.n - 1)
    perm = rng.gen.permutation(dataset.n)
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    train = Dataset(
        x=dataset.x[train_idx],
        y=dataset.y[train_idx],
        name=dataset.name,
        feature_names=dataset.feature_names,
    )
    test = Dataset(
        x=dataset.x[test_idx],
        y=dataset.y[test_idx],
        name=dataset.name,
        feature_names=dataset.feature_names,
    )
    return train, test


def standardize(train, test):
    """Fit per-column scaler on train only; apply to both splits.

    Returns (train_std, test_std, scaler). The scaler exposes the inverse maps
    used to report metrics in original units.
    """
    if train.n < 1:
        raise InvalidInputError("training split is empty")
    const = _constant_columns(train.x, train.feature_names or tuple(range(train.p)))
    if const:
        raise ScalerError(f"constant feature column(s) {const} cannot be scaled")
    x_mean = train.x.mean(axis=0)
    x_std = train.x.std(axis=0)
    y_mean = float(train.y.mean())
    y_std = float(train.y.std())
    if y_std == 0.0:
        raise ScalerError("target column is constant and cannot be scaled")
    scaler = Scaler(x_mean=x_mean, x_std=x_std, y_mean=y_mean, y_std=y_std)
    out = []
    for ds in (train, test):
        out.append(
            Dataset(
                x=scaler.transform_x(ds.x),
                y=scaler.transform_y(ds.y),
                name=ds.name,
                feature_names=ds.feature_names,
                scaler=scaler,
            )
        )
    return out[0], out[1], scaler
