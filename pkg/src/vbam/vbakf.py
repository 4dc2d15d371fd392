"""Variational Bayesian adaptive Kalman filter.

Jointly tracks the filter state (Gaussian) and the unknown measurement-noise
covariance (inverse-Wishart, mean-parameterized) by alternating a Kalman
update with a covariance recomputation until the pair is self-consistent.
The noise belief stores the inverse-Wishart mean Sigma = V / (nu - d - 1)
directly, so the fixed-point recursion is evaluated in Sigma form without a
redundant scale-matrix conversion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._accel import HAVE_NUMBA, NUMBA_DEFAULT, jit_compile
from .gaussian import NotPositiveDefinite, SpdMatrix, as_spd
from .kalman import GaussianState, StateSpaceModel, kf_predict


@dataclass
class NoiseBelief:
    """Inverse-Wishart belief over the measurement noise covariance.

    ``sigma`` is the distribution mean; ``nu`` the degrees of freedom.
    ``nu - d - 1 > 0`` is required for the mean to exist.
    """

    nu: float
    sigma: SpdMatrix

    def __post_init__(self):
        self.sigma = as_spd(self.sigma)
        if self.nu - self.sigma.dim - 1 <= 0:
            raise ValueError(
                f"nu = {self.nu} too small for dim {self.sigma.dim}: need nu - d - 1 > 0"
            )


@dataclass
class VbakfState:
    gauss: GaussianState
    noise: NoiseBelief

    def __post_init__(self):
        if self.gauss.P.dim != self.noise.sigma.dim:
            raise ValueError("state and noise dimensions disagree")


@dataclass
class VbakfConfig:
    """Dynamics and stopping parameters.

    ``rho`` in (0, 1] discounts the accumulated degrees of freedom;
    ``dynamics`` (the B matrix, None meaning identity) propagates the noise
    covariance.  The sampler requires rho = 1 and B = I, which it enforces
    by constructing this config itself.
    """

    rho: float = 1.0
    dynamics: np.ndarray | None = None
    max_iters: int = 5
    fp_tol: float = 1e-10

    def __post_init__(self):
        if not (0 < self.rho <= 1):
            raise ValueError("rho must lie in (0, 1]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.fp_tol < 0:
            raise ValueError("fp_tol must be nonnegative")
        if self.dynamics is not None:
            self.dynamics = np.asarray(self.dynamics, dtype=float)
            det = abs(np.linalg.det(self.dynamics))
            if not (0 < det <= 1):
                raise ValueError("dynamics matrix must satisfy 0 < |det B| <= 1")


def fixed_point_core(m_pred, p_pred, sig_pred, y, h, w_prev, w_den, max_iters, fp_tol):
    """Self-consistency loop coupling the Kalman update and the noise mean.

    Each pass runs one Kalman update with the current noise iterate, then
    recomputes the noise mean as the weighted sum of the predicted mean, the
    measurement-space state covariance and the squared residual.  Stops when
    the Frobenius change drops below ``fp_tol`` or after ``max_iters`` passes.

    Written nopython-compatible; the compiled twin is `_fixed_point_jit`.
    Returns (m, P, sigma, iters_used, last_residual).
    """
    sig = sig_pred.copy()
    m_new = m_pred.copy()
    p_new = p_pred.copy()
    iters = 0
    resid = np.inf
    for _ in range(max_iters):
        s = h @ p_pred @ h.T + sig
        s = 0.5 * (s + s.T)
        chol = np.linalg.cholesky(s)
        gain = np.linalg.solve(chol.T, np.linalg.solve(chol, h @ p_pred)).T
        m_new = m_pred + gain @ (y - h @ m_pred)
        p_new = p_pred - gain @ s @ gain.T
        p_new = 0.5 * (p_new + p_new.T)
        r = y - h @ m_new
        sig_new = (w_prev * sig_pred + h @ p_new @ h.T + np.outer(r, r)) / w_den
        sig_new = 0.5 * (sig_new + sig_new.T)
        diff = sig_new - sig
        resid = np.sqrt(np.sum(diff * diff))
        sig = sig_new
        iters += 1
        if resid < fp_tol:
            break
    return m_new, p_new, sig, iters, resid


# Compiled twin (dispatcher wrapping is lazy; code generation happens on
# first call).  Kernel builders pick one or the other per backend.
fixed_point_jit = jit_compile(fixed_point_core) if HAVE_NUMBA else None
_default_fixed_point = fixed_point_jit if NUMBA_DEFAULT else fixed_point_core


def vbakf_predict(cfg: VbakfConfig, state: VbakfState, model: StateSpaceModel) -> VbakfState:
    """Prediction: Kalman predict plus the heuristic noise dynamics.

    nu' = rho (nu - d - 1) + d + 1 and Sigma' = B Sigma B^T.
    """
    gauss = kf_predict(model, state.gauss)
    d = model.dim
    nu_pred = cfg.rho * (state.noise.nu - d - 1) + d + 1
    if cfg.dynamics is None:
        sig_pred = state.noise.sigma
    else:
        b = cfg.dynamics
        sig_pred = SpdMatrix(b @ state.noise.sigma.entries @ b.T)
    return VbakfState(gauss, NoiseBelief(nu_pred, sig_pred))


def vbakf_update(
    cfg: VbakfConfig, predicted: VbakfState, model: StateSpaceModel, y
) -> tuple[VbakfState, int, float]:
    """Measurement update: nu += 1, then the fixed-point loop.

    The mixing weight uses the pre-increment degrees of freedom.  When
    rho < 1 the post-prediction value stands in for the previous step's
    (the two coincide at rho = 1).  Returns (state, iters_used, residual).
    """
    d = model.dim
    y = np.asarray(y, dtype=float)
    if y.shape != (d,):
        raise ValueError(f"measurement has shape {y.shape}, expected ({d},)")
    w_prev = predicted.noise.nu - d - 1
    w_den = w_prev + 1.0  # new nu minus d.. minus 1: (nu + 1) - d - 1
    if w_prev <= 0:
        raise ValueError("degrees of freedom too small: nu - d - 1 must stay positive")
    try:
        m_new, p_new, sig_new, iters, resid = _default_fixed_point(
            predicted.gauss.m,
            predicted.gauss.P.entries,
            predicted.noise.sigma.entries,
            y,
            model.H,
            w_prev,
            w_den,
            cfg.max_iters,
            cfg.fp_tol,
        )
        state = VbakfState(
            GaussianState(m_new, SpdMatrix(p_new)),
            NoiseBelief(predicted.noise.nu + 1, SpdMatrix(sig_new)),
        )
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("fixed-point iterate lost positive definiteness") from exc
    return state, int(iters), float(resid)


@dataclass
class VbakfStepDiagnostics:
    iters_used: int
    fp_residual: float


def vbakf_step(
    cfg: VbakfConfig, state: VbakfState, model: StateSpaceModel, y
) -> tuple[VbakfState, VbakfStepDiagnostics]:
    """One predict-update cycle for measurement y."""
    predicted = vbakf_predict(cfg, state, model)
    updated, iters, resid = vbakf_update(cfg, predicted, model, y)
    return updated, VbakfStepDiagnostics(iters, resid)
