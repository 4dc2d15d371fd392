"""Quantities used to compare samplers.

Streaming first/second moments (mergeable across parallel chains),
density-difference histograms for the strip benchmark, the covariance-shape
suboptimality factor, acceptance-rate traces, and a simple batch-means ESS.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import NotPositiveDefinite, SpdMatrix, cholesky


class StreamingMoments:
    """Running mean and centered co-moment matrix (Welford recursion).

    Batch updates use the same combine rule as :meth:`merge`, so streaming
    results match a batch recomputation to floating-point accuracy at any
    checkpoint, independent of chunking.
    """

    def __init__(self, dim: int):
        self.dim = int(dim)
        self.count = 0
        self.mean = np.zeros(self.dim)
        self._m2 = np.zeros((self.dim, self.dim))

    def update(self, x) -> None:
        x = np.asarray(x, dtype=float)
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self._m2 += np.outer(delta, x - self.mean)

    def update_batch(self, xs) -> None:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        n = xs.shape[0]
        if n == 0:
            return
        batch_mean = xs.mean(axis=0)
        centered = xs - batch_mean
        batch_m2 = centered.T @ centered
        self._combine(n, batch_mean, batch_m2)

    def merge(self, other: "StreamingMoments") -> "StreamingMoments":
        """Combined accumulator for the union of both sample streams."""
        if other.dim != self.dim:
            raise ValueError("cannot merge accumulators of different dimension")
        out = StreamingMoments(self.dim)
        out.count = self.count
        out.mean = self.mean.copy()
        out._m2 = self._m2.copy()
        out._combine(other.count, other.mean, other._m2)
        return out

    def _combine(self, n: int, mean: np.ndarray, m2: np.ndarray) -> None:
        if n == 0:
            return
        total = self.count + n
        delta = mean - self.mean
        self._m2 = self._m2 + m2 + np.outer(delta, delta) * (self.count * n / total)
        self.mean = self.mean + delta * (n / total)
        self.count = total

    def covariance(self, ddof: int = 1) -> np.ndarray:
        if self.count <= ddof:
            raise ValueError(f"need more than {ddof} samples")
        return self._m2 / (self.count - ddof)

    def covariance_matrix(self, epsilon: float = 0.0) -> SpdMatrix:
        """Finalized covariance plus epsilon * I, as an SpdMatrix."""
        return SpdMatrix(self.covariance() + epsilon * np.eye(self.dim))


class Histogram1D:
    """Uniform-bin histogram; bin edges align with the strip boundaries.

    The default 72 bins over [-18, 18] put edges exactly at +-0.5 so the
    density discontinuity is not smeared across a bin.
    """

    def __init__(self, lo: float = -18.0, hi: float = 18.0, nbins: int = 72):
        if hi <= lo or nbins < 1:
            raise ValueError("need hi > lo and nbins >= 1")
        self.edges = np.linspace(lo, hi, nbins + 1)
        self.counts = np.zeros(nbins, dtype=np.int64)

    @property
    def nbins(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def bin_width(self) -> float:
        return float(self.edges[1] - self.edges[0])

    def update(self, values) -> None:
        values = np.asarray(values, dtype=float).ravel()
        if values.size == 0:
            return
        lo, hi = self.edges[0], self.edges[-1]
        if values.min() < lo or values.max() > hi:
            raise ValueError(f"samples outside histogram range [{lo}, {hi}]")
        counts, _ = np.histogram(values, bins=self.edges)
        self.counts += counts

    def density(self) -> np.ndarray:
        """Normalized empirical density per bin (integrates to one)."""
        if self.total == 0:
            raise ValueError("histogram is empty")
        return self.counts / (self.total * self.bin_width)


@dataclass
class DensityDifference:
    """Per-bin gap between an empirical marginal and the true one."""

    centers: np.ndarray
    empirical: np.ndarray
    true: np.ndarray
    difference: np.ndarray
    standard_error: np.ndarray
    sample_count: int

    def within_sigma(self, n_sigma: float = 5.0) -> np.ndarray:
        """Boolean per bin: |difference| <= n_sigma * standard error."""
        return np.abs(self.difference) <= n_sigma * self.standard_error


def density_difference(samples, true_marginal, histogram: Histogram1D | None = None) -> DensityDifference:
    """Empirical density of a 1-d sample stream minus the true marginal.

    ``samples`` may be an array of values or an already-filled
    :class:`Histogram1D` (pass ``histogram`` positionally filled and
    ``samples=None`` for streaming use).  Standard errors are the binomial
    ones of the true bin probabilities at the observed sample count.
    """
    if histogram is None:
        histogram = Histogram1D()
        histogram.update(np.asarray(samples, dtype=float))
    elif samples is not None:
        histogram.update(np.asarray(samples, dtype=float))
    if histogram.total == 0:
        raise ValueError("no samples to compare")
    centers = histogram.centers
    width = histogram.bin_width
    empirical = histogram.density()
    true = np.asarray(true_marginal(centers), dtype=float)
    p = true * width
    n = histogram.total
    se = np.sqrt(np.clip(p * (1 - p), 0.0, None) / n) / width
    return DensityDifference(centers, empirical, true, empirical - true, se, n)


def suboptimality_factor(proposal_cov, target_cov) -> float:
    """Shape mismatch b = d * sum(1/l_i^2) / (sum(1/l_i))^2 >= 1.

    The l_i are the eigenvalues of proposal^(1/2) target^(-1/2), computed as
    square roots of the generalized eigenvalues of (proposal, target); b = 1
    exactly when the proposal covariance is proportional to the target's.
    """
    prop = proposal_cov.entries if isinstance(proposal_cov, SpdMatrix) else np.asarray(proposal_cov, float)
    targ = target_cov.entries if isinstance(target_cov, SpdMatrix) else np.asarray(target_cov, float)
    if prop.shape != targ.shape:
        raise ValueError("covariances must share a dimension")
    d = prop.shape[0]
    chol = cholesky(targ)
    half = np.linalg.solve(chol, prop)
    whitened = np.linalg.solve(chol, half.T)
    eigenvalues = np.linalg.eigvalsh(0.5 * (whitened + whitened.T))
    if eigenvalues[0] <= 0:
        raise NotPositiveDefinite("proposal covariance is not positive definite")
    lam = np.sqrt(eigenvalues)
    inv = 1.0 / lam
    return float(d * np.sum(inv**2) / np.sum(inv) ** 2)


def ergodic_average(stream, g=None) -> np.ndarray:
    """Streaming mean of g over the samples (g defaults to the identity)."""
    count = 0
    total = None
    for x in stream:
        value = np.asarray(g(x) if g is not None else x, dtype=float)
        total = value.copy() if total is None else total + value
        count += 1
    if count == 0:
        raise ValueError("empty sample stream")
    return total / count


def acceptance_trace(decisions, window: int = 10_000) -> np.ndarray:
    """Sliding-window mean of accept indicators (window truncated at the start)."""
    indicators = np.asarray(
        [d.accepted if hasattr(d, "accepted") else d for d in decisions], dtype=float
    )
    if indicators.size == 0:
        raise ValueError("no decisions")
    csum = np.concatenate(([0.0], np.cumsum(indicators)))
    n = indicators.size
    idx = np.arange(1, n + 1)
    start = np.maximum(0, idx - window)
    return (csum[idx] - csum[start]) / (idx - start)


def ess_batch_means(values, n_batches: int = 30) -> float:
    """Batch-means effective sample size of a scalar chain (plumbing only)."""
    x = np.asarray(values, dtype=float).ravel()
    n = x.size
    if n < 2 * n_batches:
        raise ValueError("chain too short for the requested batch count")
    batch = n // n_batches
    trimmed = x[: batch * n_batches].reshape(n_batches, batch)
    means = trimmed.mean(axis=1)
    var_chain = x.var(ddof=1)
    var_mean = means.var(ddof=1) * batch
    if var_mean <= 0:
        return float(n)
    return float(min(n, n * var_chain / var_mean))
