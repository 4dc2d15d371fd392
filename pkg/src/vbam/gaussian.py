"""SPD-matrix algebra and Gaussian / Student-t variate generation.

Every covariance in the package (proposal, measurement noise, filter state)
is carried as an :class:`SpdMatrix`, which symmetrizes on construction and
caches its Cholesky factor.  All sampling takes an explicit
``numpy.random.Generator`` so runs are replayable from a seed; the ``z`` /
``w`` arguments let tests force specific variates.
"""

from __future__ import annotations

import math

import numpy as np


class NotPositiveDefinite(Exception):
    """A matrix that must be SPD failed its Cholesky factorization.

    This signals that a covariance violated its invariants somewhere
    upstream; it is not a recoverable condition.
    """


def symmetrize(m: np.ndarray) -> np.ndarray:
    """Return (m + m.T) / 2."""
    return 0.5 * (m + m.T)


def cholesky(m) -> np.ndarray:
    """Lower-triangular Cholesky factor of an SPD matrix.

    Raises :class:`NotPositiveDefinite` when a pivot is non-positive.
    """
    a = m.entries if isinstance(m, SpdMatrix) else np.asarray(m, dtype=float)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"matrix of dim {a.shape[0]} is not SPD") from exc


class SpdMatrix:
    """Symmetric positive-definite matrix with a cached Cholesky factor.

    Construction symmetrizes the input, absorbing the floating-point drift
    that iterative covariance updates accumulate.  Grossly asymmetric input
    is rejected as a caller bug.  Positive definiteness is checked lazily,
    on first use of :attr:`chol`.
    """

    __slots__ = ("_entries", "_chol")

    def __init__(self, entries):
        m = np.array(entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {m.shape}")
        scale = max(1.0, float(np.abs(m).max()))
        if float(np.abs(m - m.T).max()) > 1e-8 * scale:
            raise ValueError("matrix is not symmetric")
        self._entries = symmetrize(m)
        self._entries.setflags(write=False)
        self._chol = None

    @classmethod
    def identity(cls, dim: int) -> "SpdMatrix":
        return cls(np.eye(dim))

    @classmethod
    def diagonal(cls, diag) -> "SpdMatrix":
        return cls(np.diag(np.asarray(diag, dtype=float)))

    @property
    def dim(self) -> int:
        return self._entries.shape[0]

    @property
    def entries(self) -> np.ndarray:
        """The matrix itself (read-only view)."""
        return self._entries

    @property
    def chol(self) -> np.ndarray:
        """Lower-triangular factor L with L @ L.T == entries."""
        if self._chol is None:
            chol = cholesky(self._entries)
            chol.setflags(write=False)
            self._chol = chol
        return self._chol

    def scaled(self, factor: float) -> "SpdMatrix":
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        return SpdMatrix(self._entries * factor)

    def __repr__(self) -> str:
        return f"SpdMatrix(dim={self.dim})"


def as_spd(cov) -> SpdMatrix:
    """Coerce an array or SpdMatrix to SpdMatrix."""
    return cov if isinstance(cov, SpdMatrix) else SpdMatrix(cov)


def sample_mvn(rng, mean, cov, scale: float = 1.0, z=None) -> np.ndarray:
    """Draw from N(mean, scale * cov) as mean + sqrt(scale) * L @ z.

    ``z`` overrides the standard-normal vector (testing hook); otherwise it
    is drawn from ``rng``.
    """
    mean = np.asarray(mean, dtype=float)
    cov = as_spd(cov)
    if mean.shape != (cov.dim,):
        raise ValueError(f"mean has shape {mean.shape}, covariance dim is {cov.dim}")
    if scale <= 0:
        raise ValueError("scale must be positive")
    if z is None:
        z = rng.standard_normal(cov.dim)
    else:
        z = np.asarray(z, dtype=float)
        if z.shape != (cov.dim,):
            raise ValueError(f"z has shape {z.shape}, expected ({cov.dim},)")
    return mean + math.sqrt(scale) * (cov.chol @ z)


def sample_student_t(
    rng, location, scale_mat, dof: float, scale: float = 1.0, z=None, w=None
) -> np.ndarray:
    """Multivariate Student-t draw with the given location and scale matrix.

    Built as a Gaussian draw divided by sqrt(w / dof) with w ~ chi-square(dof).
    The Gaussian variate is consumed before the chi-square one, so forcing
    ``z`` alone leaves the mixing draw to ``rng``.
    """
    if dof <= 0:
        raise ValueError("dof must be positive")
    location = np.asarray(location, dtype=float)
    gaussian_part = sample_mvn(rng, np.zeros_like(location), scale_mat, scale, z=z)
    if w is None:
        w = rng.chisquare(dof)
    if w <= 0:
        raise ValueError("chi-square draw must be positive")
    return location + gaussian_part / math.sqrt(w / dof)


def frobenius_norm(m) -> float:
    """sqrt of the sum of squared entries."""
    a = m.entries if isinstance(m, SpdMatrix) else np.asarray(m, dtype=float)
    return float(np.sqrt(np.sum(a * a)))


def within_band(m, mu1: float, mu2: float) -> bool:
    """True iff every eigenvalue of ``m`` lies in [mu1, mu2].

    Decided from the extremal eigenvalues only; the matrix is not modified.
    The caller reacts to an out-of-band covariance (the sampler falls back
    to the previous one).
    """
    if not (0 < mu1 <= mu2):
        raise ValueError("need 0 < mu1 <= mu2")
    a = m.entries if isinstance(m, SpdMatrix) else symmetrize(np.asarray(m, dtype=float))
    eigenvalues = np.linalg.eigvalsh(a)
    return bool(eigenvalues[0] >= mu1 and eigenvalues[-1] <= mu2)
