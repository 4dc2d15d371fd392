"""Linear-Gaussian Kalman filter with known noise, plus Gramian diagnostics.

The filter is the standard predict/update pair.  The Gramian checks decide
whether a state-space model is uniformly completely observable and
controllable over a finite window for bounded noise sequences; the sampler
runs either way, but the CLI warns when the check fails because the
boundedness guarantees for the adaptation then do not hold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gaussian import NotPositiveDefinite, SpdMatrix, as_spd, cholesky, symmetrize


@dataclass
class StateSpaceModel:
    """x_k = A x_{k-1} + process noise (cov Q);  y_k = H x_k + meas. noise."""

    A: np.ndarray
    Q: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)
        self.H = np.asarray(self.H, dtype=float)
        d = self.A.shape[0]
        for name, m in (("A", self.A), ("Q", self.Q), ("H", self.H)):
            if m.shape != (d, d):
                raise ValueError(f"{name} has shape {m.shape}, expected ({d}, {d})")

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @classmethod
    def random_walk(cls, dim: int, q: float) -> "StateSpaceModel":
        """A = I, H = I, Q = q * I — the default model for the samplers."""
        return cls(np.eye(dim), q * np.eye(dim), np.eye(dim))


@dataclass
class GaussianState:
    """Filter mean/covariance pair."""

    m: np.ndarray
    P: SpdMatrix

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        self.P = as_spd(self.P)
        if self.m.shape != (self.P.dim,):
            raise ValueError("mean and covariance dimensions disagree")


def kf_predict(model: StateSpaceModel, state: GaussianState) -> GaussianState:
    """Prediction step: m' = A m,  P' = A P A^T + Q."""
    if state.m.shape[0] != model.dim:
        raise ValueError("state and model dimensions disagree")
    m_pred = model.A @ state.m
    p_pred = symmetrize(model.A @ state.P.entries @ model.A.T + model.Q)
    return GaussianState(m_pred, SpdMatrix(p_pred))


def spd_solve(s: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve s @ x = b for SPD s via its Cholesky factor (never forms s^-1)."""
    chol = cholesky(s)
    return np.linalg.solve(chol.T, np.linalg.solve(chol, b))


def kf_update(
    model: StateSpaceModel,
    predicted: GaussianState,
    y: np.ndarray,
    sigma: SpdMatrix,
    joseph: bool = False,
) -> GaussianState:
    """Update step with measurement y and noise covariance sigma.

    The covariance is reduced as P = P' - K S K^T; ``joseph=True`` selects
    the algebraically equivalent Joseph form, which is more robust when K
    is nearly singular.
    """
    sigma = as_spd(sigma)
    y = np.asarray(y, dtype=float)
    h = model.H
    m_pred, p_pred = predicted.m, predicted.P.entries
    s = symmetrize(h @ p_pred @ h.T + sigma.entries)
    gain = spd_solve(s, h @ p_pred).T  # K = P' H^T S^-1
    m_new = m_pred + gain @ (y - h @ m_pred)
    if joseph:
        a = np.eye(model.dim) - gain @ h
        p_new = a @ p_pred @ a.T + gain @ sigma.entries @ gain.T
    else:
        p_new = p_pred - gain @ s @ gain.T
    return GaussianState(m_new, SpdMatrix(symmetrize(p_new)))


def _transition_powers(a: np.ndarray, length: int, inverse: bool) -> list[np.ndarray]:
    """[A^0, A^1, ..., A^length] (or inverse powers), A time-invariant."""
    d = a.shape[0]
    try:
        base = np.linalg.inv(a) if inverse else a
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("dynamic matrix A is singular") from exc
    powers = [np.eye(d)]
    for _ in range(length):
        powers.append(base @ powers[-1])
    return powers


def observability_gramian(model: StateSpaceModel, sigmas, window) -> np.ndarray:
    """Information matrix over window (m0, M), inclusive.

    Sum over k of Phi(k, M)^T H^T Sigma_k^-1 H Phi(k, M), where Phi(M, k)
    is the forward product of A over indices k..M-1 and Phi(k, M) is its
    inverse, so Phi(M, M) = I.  Requires invertible A.
    """
    m0, m_end = window
    if m_end < m0:
        raise ValueError("empty window")
    length = m_end - m0
    sigmas = list(sigmas)
    if len(sigmas) == 1:
        sigmas = sigmas * (length + 1)
    if len(sigmas) != length + 1:
        raise ValueError(f"need {length + 1} noise covariances, got {len(sigmas)}")
    powers = _transition_powers(model.A, length, inverse=True)
    h = model.H
    gram = np.zeros((model.dim, model.dim))
    for j, sigma in enumerate(sigmas):  # j = k - m0; Phi(k, M) = Ainv^(M - k)
        phi = powers[length - j]
        h_phi = h @ phi
        gram += h_phi.T @ spd_solve(as_spd(sigma).entries, h_phi)
    return symmetrize(gram)


def controllability_gramian(model: StateSpaceModel, window) -> np.ndarray:
    """Controllability matrix over window (m0, M): sum of Phi(M,k) Q Phi(M,k)^T."""
    m0, m_end = window
    if m_end < m0:
        raise ValueError("empty window")
    length = m_end - m0
    powers = _transition_powers(model.A, length, inverse=False)
    gram = np.zeros((model.dim, model.dim))
    for j in range(length + 1):  # Phi(M, k) = A^(M - k)
        phi = powers[length - j]
        gram += phi @ model.Q @ phi.T
    return symmetrize(gram)


@dataclass
class GramianCheck:
    beta1: float
    beta2: float

    @property
    def passed(self) -> bool:
        return self.beta1 > 0.0


@dataclass
class UniformConditionsReport:
    """Empirical beta bounds for the windowed Gramians of a model."""

    window_length: int
    observability: GramianCheck
    controllability: GramianCheck
    probes: int = 0

    @property
    def passed(self) -> bool:
        return self.observability.passed and self.controllability.passed

    def describe(self) -> str:
        obs, ctrl = self.observability, self.controllability
        lines = [
            f"window length L = {self.window_length}",
            f"observability:    beta1 = {obs.beta1:.6g}, beta2 = {obs.beta2:.6g}"
            f" -> {'pass' if obs.passed else 'FAIL'}",
            f"controllability:  beta1 = {ctrl.beta1:.6g}, beta2 = {ctrl.beta2:.6g}"
            f" -> {'pass' if ctrl.passed else 'FAIL'}",
            f"verdict: {'pass' if self.passed else 'FAIL'}",
        ]
        return "\n".join(lines)


def check_uniform_conditions(
    model: StateSpaceModel,
    mu1: float,
    mu2: float,
    window_length: int = 1,
    beta_probe_count: int = 0,
    rng=None,
) -> UniformConditionsReport:
    """Evaluate both Gramians for noise sequences bounded by [mu1 I, mu2 I].

    The constant extremes Sigma = mu1 I and Sigma = mu2 I bound the
    observability Gramian for every bounded sequence (matrix inversion is
    order-reversing), so their extremal eigenvalues are the beta candidates.
    ``beta_probe_count`` additional random diagonal sequences inside the
    band are probed as an empirical sanity check.
    """
    d = model.dim
    window = (0, window_length)
    sequences = [
        [SpdMatrix(mu1 * np.eye(d))] * (window_length + 1),
        [SpdMatrix(mu2 * np.eye(d))] * (window_length + 1),
    ]
    if beta_probe_count > 0:
        rng = np.random.default_rng(0) if rng is None else rng
        log_lo, log_hi = np.log(mu1), np.log(mu2)
        for _ in range(beta_probe_count):
            seq = [
                SpdMatrix(np.diag(np.exp(rng.uniform(log_lo, log_hi, size=d))))
                for _ in range(window_length + 1)
            ]
            sequences.append(seq)

    obs_min, obs_max = np.inf, -np.inf
    for seq in sequences:
        eigenvalues = np.linalg.eigvalsh(observability_gramian(model, seq, window))
        obs_min = min(obs_min, float(eigenvalues[0]))
        obs_max = max(obs_max, float(eigenvalues[-1]))
    ctrl_eigs = np.linalg.eigvalsh(controllability_gramian(model, window))
    return UniformConditionsReport(
        window_length=window_length,
        observability=GramianCheck(obs_min, obs_max),
        controllability=GramianCheck(float(ctrl_eigs[0]), float(ctrl_eigs[-1])),
        probes=beta_probe_count,
    )
