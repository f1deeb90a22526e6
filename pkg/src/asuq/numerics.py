"""Dense linear algebra and seeded random streams used by every other module.

Matrices are plain float64 numpy arrays (row-major). Eigen- and singular-value
decompositions are delegated to LAPACK through numpy, then post-processed to
the package conventions: descending spectra and a deterministic sign for each
vector (largest-magnitude entry made positive) so projections are identical
across runs and platforms.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidInputError

__all__ = [
    "RngStream",
    "EigDecomposition",
    "sym_eig_desc",
    "thin_svd",
    "gaussian_vector",
    "fix_column_signs",
]


class RngStream:
    """Reproducible random stream keyed by (seed, stream id).

    Two instances constructed with the same (seed, stream) produce identical
    sample sequences; distinct stream ids give statistically independent
    sequences (numpy SeedSequence spawn keys). Instances are stateful and must
    not be shared between concurrent tasks -- derive one child per task.
    """

    def __init__(self, seed, stream=0, _path=()):
        self.seed = int(seed)
        self.stream = int(stream)
        self._path = tuple(int(p) for p in _path)
        key = (self.stream,) + self._path
        self.gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=key))
        )

    def child(self, k):
        """Independent substream; child(k) is reproducible for fixed (seed, stream, k)."""
        return RngStream(self.seed, self.stream, _path=self._path + (int(k),))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream}, path={self._path})"


@dataclass
class EigDecomposition:
    """Eigenvalues in non-increasing order; eigenvectors as orthonormal columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _as_checked_matrix(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-dimensional, got ndim={a.ndim}")
    if np.isnan(a).any():
        raise InvalidInputError(f"{name} contains NaN entries")
    if not np.isfinite(a).all():
        raise InvalidInputError(f"{name} contains non-finite entries")
    return a


def fix_column_signs(v):
    """Flip each column so its largest-magnitude entry is positive.

    Removes the sign ambiguity of eigen/singular vectors; ties resolve to the
    first index of maximal magnitude (numpy argmax), which is deterministic.
    """
    v = np.asarray(v)
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return v * signs


def sym_eig_desc(s):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    The input must be square and symmetric to within 1e-10 relative tolerance.
    Returns V with sign-fixed orthonormal columns such that V diag(lam) V^T
    reconstructs the input.
    """
    s = _as_checked_matrix(s, "matrix")
    if s.shape[0] != s.shape[1]:
        raise DimensionError(f"matrix must be square, got shape {s.shape}")
    scale = np.abs(s).max()
    if scale > 0 and np.abs(s - s.T).max() > 1e-10 * scale:
        raise DimensionError("matrix is not symmetric within 1e-10 relative tolerance")
    # symmetrize so LAPACK sees an exactly symmetric operator
    vals, vecs = np.linalg.eigh((s + s.T) / 2.0)
    vals = vals[::-1].copy()
    vecs = fix_column_signs(vecs[:, ::-1])
    return EigDecomposition(eigenvalues=vals, eigenvectors=vecs)


def thin_svd(a):
    """Thin SVD A = U diag(s) V^T with singular values descending.

    Right singular vectors carry the package sign convention; the matching
    columns of U are flipped with them so the product is unchanged.
    """
    a = _as_checked_matrix(a, "matrix")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionError("matrix must have at least one row and one column")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    v = vt.T
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, s, (v * signs).T


def gaussian_vector(n, mean, std, rng):
    """n i.i.d. draws from N(mean, std^2); std = 0 returns the constant vector."""
    if std < 0:
        raise InvalidInputError(f"std must be >= 0, got {std}")
    if std == 0:
        return np.full(int(n), float(mean))
    return rng.gen.standard_normal(int(n)) * std + mean
