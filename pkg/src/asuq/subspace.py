"""Construction of gradient-informed and PCA parameter subspaces.

The subspace is the affine set theta = anchor + P z where P holds the top-K
eigenvectors of the uncentered second-moment matrix C_hat = (1/M) G^T G of
sampled gradient rows (methods "AS" and "LIS") or of SGD iterate deviations
(method "PCA"). P is computed through the thin SVD of the row matrix so the
n x n matrix is never materialized.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidInputError
from .network import GradTarget, backprop_param_grad, param_count
from .numerics import gaussian_vector, thin_svd

METHODS = ("AS", "LIS", "PCA", "FULL")

_PROJ_MAGIC = b"ASPJ"
_PROJ_VERSION = 1


@dataclass
class GradientMatrix:
    """M x n matrix whose row m is the target gradient at perturbed weights."""

    rows: np.ndarray
    kind: str
    sigma0: float
    anchor_seed: int


@dataclass
class Projection:
    """Orthonormal basis (n, K) plus the leading spectrum of C_hat."""

    matrix: np.ndarray
    spectrum: np.ndarray
    method: str
    sigma0: float = 0.0
    seed: int = 0

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def k(self):
        return self.matrix.shape[1]


@dataclass
class SubspaceModel:
    """Anchor weights, projection, and the Gaussian prior scale on z."""

    anchor: np.ndarray
    projection: Projection
    prior_std: float = 1.0

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=np.float64)
        if self.anchor.ndim != 1 or self.anchor.size != self.projection.n:
            raise DimensionError(
                f"anchor length {self.anchor.size} != projection rows {self.projection.n}"
            )
        if self.prior_std <= 0:
            raise InvalidInputError(f"prior_std must be > 0, got {self.prior_std}")

    @property
    def k(self):
        return self.projection.k


def default_perturb_std(anchor):
    """Default sigma0 = 0.1 x RMS of the anchor weights."""
    anchor = np.asarray(anchor, dtype=np.float64)
    return 0.1 * float(np.sqrt(np.mean(anchor**2)))


def lis_target_for(config):
    """Gradient target analyzed by the LIS method.

    Scalar heads use the squared-error loss; variance heads use the
    standardized squared residual (y - mu)^2 / sigma^2.
    """
    if config.head == "mean_variance":
        return GradTarget.STD_SQ_RESIDUAL
    return GradTarget.MSE_LOSS


def sample_gradient_matrix(kind, config, anchor, sigma0, n_rows, dataset, rng, target=None):
    """Collect M gradient rows, each at an independently drawn data point and
    perturbed weight vector theta_m ~ N(anchor, sigma0^2 I).

    Row m is derived from substream rng.child(m), so the matrix is identical
    no matter how rows are scheduled.
    """
    if kind not in ("AS", "LIS"):
        raise InvalidInputError(f"kind must be 'AS' or 'LIS', got {kind!r}")
    if n_rows < 1:
        raise InvalidInputError(f"need at least one gradient sample, got {n_rows}")
    if sigma0 < 0:
        raise InvalidInputError(f"sigma0 must be >= 0, got {sigma0}")
    if dataset.n < 1:
        raise InvalidInputError("dataset is empty")
    anchor = np.asarray(anchor, dtype=np.float64)
    n = param_count(config)
    if anchor.size != n:
        raise DimensionError(f"anchor length {anchor.size} != param count {n}")
    if target is None:
        target = GradTarget.OUTPUT_MEAN if kind == "AS" else lis_target_for(config)

    rows = np.empty((n_rows, n))
    for m in range(n_rows):
        rs = rng.child(m)
        idx = int(rs.gen.integers(0, dataset.n))
        theta_m = anchor + gaussian_vector(n, 0.0, sigma0, rs)
        y_m = None if target is GradTarget.OUTPUT_MEAN else dataset.y[idx]
        rows[m] = backprop_param_grad(config, theta_m, dataset.x[idx], y_m, target)
    return GradientMatrix(rows=rows, kind=kind, sigma0=float(sigma0), anchor_seed=rng.seed)


def empirical_covariance(gm):
    """C_hat = (1/M) G^T G; symmetric positive semi-definite."""
    g = np.asarray(gm.rows, dtype=np.float64)
    return g.T @ g / g.shape[0]


def _top_directions(rows, k):
    """Top-k right singular directions of rows/sqrt(M) and their squared
    singular values (= leading eigenvalues of C_hat)."""
    rows = np.asarray(rows, dtype=np.float64)
    m, n = rows.shape
    if not 1 <= k <= min(m, n):
        raise InvalidInputError(f"K={k} out of range [1, min(M={m}, n={n})]")
    _, s, vt = thin_svd(rows / np.sqrt(m))
    return vt[:k].T.copy(), (s[:k] ** 2).copy()


def projection_from_gradients(gm, k):
    """Top-K eigenvectors of C_hat via the Gram/SVD route."""
    basis, spectrum = _top_directions(gm.rows, k)
    method = gm.kind
    return Projection(
        matrix=basis, spectrum=spectrum, method=method,
        sigma0=gm.sigma0, seed=gm.anchor_seed,
    )


def pca_projection_from_deviations(deviations, k):
    """Principal directions of iterate deviations about the anchor (uncentered,
    same computation as the gradient route)."""
    basis, spectrum = _top_directions(deviations, k)
    return Projection(matrix=basis, spectrum=spectrum, method="PCA")


def identity_projection(n):
    """Full-space model as a trivial subspace: P = I_n, flat spectrum."""
    return Projection(matrix=np.eye(n), spectrum=np.ones(n), method="FULL")


def embed(model, z):
    """theta = anchor + P z."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.size != model.k:
        raise DimensionError(f"z has length {z.size}, expected {model.k}")
    return model.anchor + model.projection.matrix @ z


def pullback_gradient(model, grad_theta):
    """Chain rule through theta = anchor + P z: returns P^T grad_theta."""
    grad_theta = np.asarray(grad_theta, dtype=np.float64)
    if grad_theta.ndim != 1 or grad_theta.size != model.projection.n:
        raise DimensionError(
            f"gradient has length {grad_theta.size}, expected {model.projection.n}"
        )
    return model.projection.matrix.T @ grad_theta


def save_projection(proj, path):
    """Binary dump: header (magic, version, n, K, method, sigma0, seed) then
    row-major little-endian float64 P followed by the spectrum."""
    method = proj.method.encode("ascii").ljust(4)
    header = struct.pack(
        "<4sIQQ4sdq",
        _PROJ_MAGIC,
        _PROJ_VERSION,
        proj.n,
        proj.k,
        method,
        float(proj.sigma0),
        int(proj.seed),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(proj.matrix, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(proj.spectrum, dtype="<f8").tobytes())


def load_projection(path):
    header_size = struct.calcsize("<4sIQQ4sdq")
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < header_size:
        raise InvalidInputError(f"{path}: truncated projection file")
    magic, version, n, k, method, sigma0, seed = struct.unpack(
        "<4sIQQ4sdq", blob[:header_size]
    )
    if magic != _PROJ_MAGIC:
        raise InvalidInputError(f"{path}: not a projection file")
    if version != _PROJ_VERSION:
        raise InvalidInputError(f"{path}: unsupported version {version}")
    expected = header_size + 8 * n * k + 8 * k
    if len(blob) != expected:
        raise InvalidInputError(f"{path}: size {len(blob)} != expected {expected}")
    body = np.frombuffer(blob, dtype="<f8", offset=header_size)
    matrix = body[: n * k].reshape(n, k).copy()
    spectrum = body[n * k :].copy()
    return Projection(
        matrix=matrix,
        spectrum=spectrum,
        method=method.decode("ascii").strip(),
        sigma0=sigma0,
        seed=seed,
    )
