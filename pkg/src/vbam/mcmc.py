"""Random-walk Metropolis core and the covariance-adaptation schemes.

Schemes:

``none``
    Fixed Gaussian (or Student-t) proposal.
``am_haario``
    Proposal covariance = running sample covariance of the whole chain
    plus a small ridge.
``am_rr``
    Mixture proposal: mostly the scaled empirical covariance, occasionally
    a small fixed kernel (and always the fixed kernel for the first 2d
    steps).
``vbam``
    Proposal covariance tracked by the noise-adaptive Kalman filter of
    :mod:`vbam.vbakf`, fed every post-decision sample as a measurement.

All schemes optionally adapt the global scale by a log-space Robbins-Monro
recursion driving the acceptance rate to ``alpha_bar``.

The step functions in this module are the readable reference path and the
testing surface (they accept forced variates).  ``run_chain`` advances whole
chunks through the fused kernels in :mod:`vbam.kernels`; both paths execute
the same arithmetic, which the test suite pins down.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from ._accel import use_numba
from .diagnostics import StreamingMoments
from .gaussian import SpdMatrix, as_spd, sample_mvn, sample_student_t, within_band
from .kalman import GaussianState, StateSpaceModel
from .kernels import make_chunk_kernel
from .targets import TargetDensity
from .vbakf import (
    NoiseBelief,
    VbakfConfig,
    VbakfState,
    vbakf_predict,
    vbakf_update,
)

SCHEMES = ("none", "am_haario", "am_rr", "vbam")


@dataclass
class AdaptationConfig:
    """Knobs shared by every scheme (each scheme reads the ones it uses)."""

    scheme: str = "vbam"
    epsilon: float = 1e-4
    beta: float = 0.05
    mu1: float = 1e-12
    mu2: float = 1e12
    delta_lambda: float = 1e-6
    alpha_bar: float = 0.234
    gain_k0: float = 1000.0
    gain_tau: float = 0.99
    rm_enabled: bool = False
    proposal_family: str = "gaussian"
    student_dof: float = 4.0
    fp_iters: int = 5
    fp_tol: float = 1e-10

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if not (0 <= self.beta <= 1):
            raise ValueError("beta must lie in [0, 1]")
        if not (0 < self.mu1 <= self.mu2):
            raise ValueError("need 0 < mu1 <= mu2")
        if not (0 < self.delta_lambda <= 1):
            raise ValueError("delta_lambda must lie in (0, 1]")
        if not (0 < self.alpha_bar < 1):
            raise ValueError("alpha_bar must lie in (0, 1)")
        if self.gain_k0 <= 1:
            raise ValueError("gain_k0 must exceed 1")
        if not (0.5 < self.gain_tau <= 1):
            raise ValueError("gain_tau must lie in (1/2, 1]")
        if self.proposal_family not in ("gaussian", "student_t"):
            raise ValueError("proposal_family must be 'gaussian' or 'student_t'")
        if self.proposal_family == "student_t" and self.scheme == "am_rr":
            raise ValueError("the mixture scheme defines its own Gaussian kernels")
        if self.student_dof <= 0:
            raise ValueError("student_dof must be positive")
        if self.fp_iters < 1:
            raise ValueError("fp_iters must be >= 1")
        if self.fp_tol < 0:
            raise ValueError("fp_tol must be nonnegative")


@dataclass
class AcceptanceDecision:
    alpha: float
    accepted: bool
    u: float


@dataclass
class ChainState:
    """Everything one chain carries between steps."""

    theta: np.ndarray
    log_target: float
    lam: float
    sigma: SpdMatrix
    filter: VbakfState | None = None
    moments: StreamingMoments | None = None
    step: int = 0


@dataclass
class ChainInit:
    """Initial values; ``None`` fields fall back to the usual defaults.

    theta0 = 0, Sigma0 = I, lambda0 = 2.38^2 / d, m0 = 0, P0 = I,
    nu0 = d + 2.
    """

    theta0: np.ndarray | None = None
    sigma0: np.ndarray | SpdMatrix | None = None
    lambda0: float | None = None
    m0: np.ndarray | None = None
    p0: np.ndarray | SpdMatrix | None = None
    nu0: float | None = None

    def resolve(self, dim: int) -> "ResolvedInit":
        theta0 = np.zeros(dim) if self.theta0 is None else np.asarray(self.theta0, float)
        if theta0.shape != (dim,):
            raise ValueError(f"theta0 has shape {theta0.shape}, expected ({dim},)")
        sigma0 = SpdMatrix.identity(dim) if self.sigma0 is None else as_spd(self.sigma0)
        lambda0 = 2.38**2 / dim if self.lambda0 is None else float(self.lambda0)
        if lambda0 <= 0:
            raise ValueError("lambda0 must be positive")
        m0 = np.zeros(dim) if self.m0 is None else np.asarray(self.m0, float)
        p0 = SpdMatrix.identity(dim) if self.p0 is None else as_spd(self.p0)
        nu0 = float(dim + 2) if self.nu0 is None else float(self.nu0)
        if nu0 - dim - 1 <= 0:
            raise ValueError("nu0 must exceed d + 1")
        return ResolvedInit(theta0, sigma0, lambda0, m0, p0, nu0)


@dataclass
class ResolvedInit:
    theta0: np.ndarray
    sigma0: SpdMatrix
    lambda0: float
    m0: np.ndarray
    p0: SpdMatrix
    nu0: float


def initial_chain_state(
    target: TargetDensity,
    cfg: AdaptationConfig,
    init: ChainInit | None = None,
    scheme: str | None = None,
) -> ChainState:
    """Assemble the step-0 chain state for the step-function API."""
    scheme = cfg.scheme if scheme is None else scheme
    resolved = (init or ChainInit()).resolve(target.dim)
    state = ChainState(
        theta=resolved.theta0.copy(),
        log_target=float(target.log_density(resolved.theta0)),
        lam=resolved.lambda0,
        sigma=resolved.sigma0,
        step=0,
    )
    if scheme == "vbam":
        state.filter = VbakfState(
            GaussianState(resolved.m0, resolved.p0),
            NoiseBelief(resolved.nu0, resolved.sigma0),
        )
    if scheme in ("am_haario", "am_rr"):
        moments = StreamingMoments(target.dim)
        moments.update(resolved.theta0)
        state.moments = moments
    return state


def metropolis_step(
    rng,
    state: ChainState,
    target: TargetDensity,
    proposal_cov,
    lam: float,
    proposal_family: str = "gaussian",
    student_dof: float = 4.0,
    z=None,
    u=None,
    w=None,
    candidate=None,
) -> tuple[ChainState, AcceptanceDecision]:
    """One accept/reject step with a symmetric proposal.

    The acceptance probability is min(1, exp(l* - l)) computed in log
    space; a candidate off support (log-density -inf) is rejected outright.
    ``z``, ``u`` and ``w`` (Student-t mixing draw) override the random
    variates for tests; draw order is z, then w, then u.  Passing
    ``candidate`` skips proposal generation entirely (for externally built
    symmetric proposals such as the mixture kernel).
    """
    if candidate is None:
        proposal_cov = as_spd(proposal_cov)
        if proposal_family == "student_t":
            candidate = sample_student_t(
                rng, state.theta, proposal_cov, student_dof, scale=lam, z=z, w=w
            )
        else:
            candidate = sample_mvn(rng, state.theta, proposal_cov, scale=lam, z=z)
    else:
        candidate = np.asarray(candidate, dtype=float)
    lp = float(target.log_density(candidate))
    if lp == -np.inf:
        alpha = 0.0
    elif lp >= state.log_target:
        alpha = 1.0
    else:
        alpha = float(np.exp(lp - state.log_target))
    u = float(rng.random()) if u is None else float(u)
    accepted = u < alpha
    new_state = replace(
        state,
        theta=candidate if accepted else state.theta.copy(),
        log_target=lp if accepted else state.log_target,
        step=state.step + 1,
    )
    return new_state, AcceptanceDecision(alpha, accepted, u)


def am_covariance_update(moments: StreamingMoments, theta_k, epsilon: float) -> np.ndarray:
    """Push a sample into the running moments; return cov(theta_0..theta_k) + eps I.

    The sample covariance uses the unbiased denominator (count - 1).  At
    least two samples must be accumulated; before that the caller keeps
    its initial covariance.
    """
    moments.update(np.asarray(theta_k, dtype=float))
    if moments.count < 2:
        raise ValueError("need at least 2 accumulated samples")
    return moments.covariance() + epsilon * np.eye(moments.dim)


def rr_propose(
    rng,
    state: ChainState,
    beta: float,
    dim: int | None = None,
    z=None,
    u_mix=None,
) -> np.ndarray:
    """Mixture proposal: fixed kernel early / with probability beta, else
    the scaled empirical covariance.

    For step index k <= 2d (and whenever the empirical covariance is not
    yet usable) the fixed kernel N(theta, 0.1^2/d I) applies; afterwards the
    empirical kernel N(theta, 2.38^2/d Sigma_k) is chosen with probability
    1 - beta.  Draw order: z, then the mixture uniform.
    """
    d = state.theta.shape[0] if dim is None else dim
    k = state.step + 1
    z = rng.standard_normal(d) if z is None else np.asarray(z, dtype=float)
    u_mix = float(rng.random()) if u_mix is None else float(u_mix)
    moments = state.moments
    if k > 2 * d and moments is not None and moments.count >= 2 and u_mix >= beta:
        cov = moments.covariance()
        eigs = np.linalg.eigvalsh(cov)
        if eigs[0] > 1e-12 * max(1.0, eigs[-1]):
            scaled = (2.38**2 / d) * cov
            return state.theta + np.linalg.cholesky(scaled) @ z
    return state.theta + math.sqrt(0.01 / d) * z


def rm_scale_update(
    lambda_prev: float,
    alpha_k: float,
    k: int,
    gain_k0: float = 1000.0,
    gain_tau: float = 0.99,
    alpha_bar: float = 0.234,
    delta_lambda: float = 1e-6,
) -> float:
    """Log-space Robbins-Monro scale update, truncated to [delta, 1/delta].

    gamma_k = k0 / max(k0, k^tau), which holds the gain at 1 until
    k^tau exceeds k0 and decays polynomially after.
    """
    gamma = gain_k0 / max(gain_k0, float(k) ** gain_tau)
    lam = float(np.exp(np.log(lambda_prev) + gamma * (alpha_k - alpha_bar)))
    return min(max(lam, delta_lambda), 1.0 / delta_lambda)


def vbam_step(
    rng,
    state: ChainState,
    target: TargetDensity,
    model: StateSpaceModel,
    cfg: AdaptationConfig,
    z=None,
    u=None,
    w=None,
) -> tuple[ChainState, AcceptanceDecision]:
    """One full sampler step: propose/decide, filter the sample, band-check.

    The filter consumes every post-decision sample, repeats included.  If
    the adapted covariance leaves the [mu1 I, mu2 I] band, the previous one
    is kept and a single update pass refreshes only the filter mean and
    covariance.  The filter's degree-of-freedom count still advances.
    """
    if cfg.scheme != "vbam":
        raise ValueError("vbam_step requires cfg.scheme == 'vbam'")
    if state.filter is None:
        raise ValueError("state carries no filter; build it with initial_chain_state")
    vcfg = VbakfConfig(rho=1.0, dynamics=None, max_iters=cfg.fp_iters, fp_tol=cfg.fp_tol)
    new_state, decision = metropolis_step(
        rng,
        state,
        target,
        state.sigma,
        state.lam,
        proposal_family=cfg.proposal_family,
        student_dof=cfg.student_dof,
        z=z,
        u=u,
        w=w,
    )
    y = new_state.theta
    predicted = vbakf_predict(vcfg, state.filter, model)
    updated, _iters, _resid = vbakf_update(vcfg, predicted, model, y)
    if within_band(updated.noise.sigma, cfg.mu1, cfg.mu2):
        new_state.sigma = updated.noise.sigma
        new_state.filter = updated
    else:
        one_pass = VbakfConfig(rho=1.0, dynamics=None, max_iters=1, fp_tol=0.0)
        kept = VbakfState(predicted.gauss, NoiseBelief(predicted.noise.nu, state.sigma))
        refreshed, _, _ = vbakf_update(one_pass, kept, model, y)
        new_state.sigma = state.sigma
        new_state.filter = VbakfState(
            refreshed.gauss, NoiseBelief(refreshed.noise.nu, state.sigma)
        )
    if cfg.rm_enabled:
        new_state.lam = rm_scale_update(
            state.lam,
            decision.alpha,
            new_state.step,
            cfg.gain_k0,
            cfg.gain_tau,
            cfg.alpha_bar,
            cfg.delta_lambda,
        )
    return new_state, decision


# ---------------------------------------------------------------------------
# Chunked chain driver


@dataclass
class ChainBlock:
    """One chunk of per-step chain output, streamed to the sink.

    Steps covered are step0 + 1 .. step0 + len(accepted).  The arrays are
    fresh copies; sinks may keep them.
    """

    step0: int
    thetas: np.ndarray
    accepted: np.ndarray
    lam: np.ndarray
    sigma_trace: np.ndarray
    fp_residual: np.ndarray | None = None
    fp_iters: np.ndarray | None = None
    sigma_diff: np.ndarray | None = None
    snap_steps: np.ndarray | None = None
    snap_sigmas: np.ndarray | None = None


class CollectSink:
    """Keeps every block in memory; convenient for tests and small runs."""

    def __init__(self):
        self.blocks: list[ChainBlock] = []

    def emit(self, block: ChainBlock) -> None:
        self.blocks.append(block)

    def _concat(self, name):
        parts = [getattr(b, name) for b in self.blocks if getattr(b, name) is not None]
        if not parts:
            return None
        return np.concatenate(parts)

    @property
    def thetas(self) -> np.ndarray:
        return self._concat("thetas")

    @property
    def accepted(self) -> np.ndarray:
        return self._concat("accepted")

    @property
    def lam(self) -> np.ndarray:
        return self._concat("lam")

    @property
    def sigma_trace(self) -> np.ndarray:
        return self._concat("sigma_trace")

    @property
    def fp_residual(self) -> np.ndarray | None:
        return self._concat("fp_residual")

    @property
    def sigma_diff(self) -> np.ndarray | None:
        return self._concat("sigma_diff")

    @property
    def snap_steps(self) -> np.ndarray | None:
        return self._concat("snap_steps")

    @property
    def snap_sigmas(self) -> np.ndarray | None:
        return self._concat("snap_sigmas")


class CallbackSink:
    """Adapts a plain function to the sink protocol."""

    def __init__(self, fn: Callable[[ChainBlock], None]):
        self.fn = fn

    def emit(self, block: ChainBlock) -> None:
        self.fn(block)


@dataclass
class ChainSummary:
    scheme: str
    dim: int
    n_steps: int
    acceptance_count: int
    acceptance_rate: float
    final_theta: np.ndarray
    final_log_target: float
    final_lambda: float
    final_sigma: np.ndarray
    chain_mean: np.ndarray
    chain_cov: np.ndarray | None
    band_violations: int
    fp_residual_max: float | None
    wall_time_s: float
    backend: str


def run_chain(
    rng,
    scheme: str,
    target: TargetDensity,
    n_steps: int,
    cfg: AdaptationConfig,
    sink=None,
    *,
    model: StateSpaceModel | None = None,
    init: ChainInit | None = None,
    backend: str | None = None,
    chunk_size: int = 10_000,
    snap_stride: int = 0,
) -> ChainSummary:
    """Run one chain for ``n_steps`` through the fused kernels.

    Every sample is streamed to ``sink`` (if given) in chunks; memory stays
    O(chunk * d + d^2) regardless of ``n_steps``.  The run is a pure
    function of the generator state, so identical seeds give identical
    chains.  ``snap_stride > 0`` additionally snapshots the full proposal
    covariance every that-many steps (for shape diagnostics).
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    d = target.dim
    resolved = (init or ChainInit()).resolve(d)
    compiled = use_numba(backend)
    kernel = make_chunk_kernel(scheme, target, "numba" if compiled else "numpy")

    theta = resolved.theta0.copy()
    lt = float(target.log_density(theta))
    lam = resolved.lambda0
    sigma = resolved.sigma0.entries.copy()
    chol0 = resolved.sigma0.chol.copy()
    m = resolved.m0.copy()
    p = resolved.p0.entries.copy()
    mean = theta.copy()
    m2 = np.zeros((d, d))
    count = 1  # the accumulated moments start from theta_0
    nu0 = resolved.nu0

    if scheme == "vbam":
        if model is None:
            model = StateSpaceModel.random_walk(d, 1e-9)
        if model.dim != d:
            raise ValueError("model dimension does not match the target")
        if not within_band(resolved.sigma0, cfg.mu1, cfg.mu2):
            raise ValueError("sigma0 lies outside the [mu1, mu2] eigenvalue band")

    t_dof = cfg.student_dof if cfg.proposal_family == "student_t" else 0.0
    chunk = max(1, min(chunk_size, n_steps))
    out_theta = np.empty((chunk, d))
    out_acc = np.zeros(chunk, dtype=np.bool_)
    out_lam = np.empty(chunk)
    out_sigtr = np.empty(chunk)
    out_fpresid = np.zeros(chunk)
    out_fpiters = np.zeros(chunk, dtype=np.int64)
    out_sigdiff = np.zeros(chunk)
    max_snaps = (chunk // snap_stride + 1) if snap_stride > 0 else 1
    out_snap_step = np.zeros(max_snaps, dtype=np.int64)
    out_snaps = np.zeros((max_snaps, d, d))

    moments = StreamingMoments(d)
    accepted_total = 0
    band_violations = 0
    fp_max = 0.0
    started = time.perf_counter()

    done = 0
    while done < n_steps:
        c = min(chunk, n_steps - done)
        z_blk = rng.standard_normal((c, d))
        umix_blk = rng.random(c) if scheme == "am_rr" else None
        w_blk = rng.chisquare(t_dof, c) if t_dof > 0 else np.zeros(c)
        u_blk = rng.random(c)

        if scheme == "vbam":
            lt, lam, n_acc, n_viol, n_snaps = kernel(
                theta, sigma, m, p, lt, lam, done,
                model.A, model.Q, model.H, nu0,
                cfg.mu1, cfg.mu2, cfg.fp_iters, cfg.fp_tol,
                cfg.rm_enabled, cfg.alpha_bar, cfg.gain_k0, cfg.gain_tau,
                cfg.delta_lambda, t_dof,
                z_blk, w_blk, u_blk, snap_stride,
                out_theta[:c], out_acc[:c], out_lam[:c], out_sigtr[:c],
                out_fpresid[:c], out_fpiters[:c], out_sigdiff[:c],
                out_snap_step, out_snaps,
            )
            band_violations += n_viol
            fp_max = max(fp_max, float(out_fpresid[:c].max()))
        elif scheme == "am_haario":
            lt, lam, n_acc, count, n_snaps = kernel(
                theta, resolved.sigma0.entries, mean, m2, lt, lam, count, done,
                cfg.epsilon,
                cfg.rm_enabled, cfg.alpha_bar, cfg.gain_k0, cfg.gain_tau,
                cfg.delta_lambda, t_dof,
                z_blk, w_blk, u_blk, snap_stride,
                out_theta[:c], out_acc[:c], out_lam[:c], out_sigtr[:c],
                out_snap_step, out_snaps,
            )
        elif scheme == "am_rr":
            lt, n_acc, count, n_snaps = kernel(
                theta, mean, m2, lt, count, done, cfg.beta,
                z_blk, umix_blk, u_blk, snap_stride,
                out_theta[:c], out_acc[:c], out_lam[:c], out_sigtr[:c],
                out_snap_step, out_snaps,
            )
        else:  # none
            lt, lam, n_acc = kernel(
                theta, chol0, lt, lam, done,
                cfg.rm_enabled, cfg.alpha_bar, cfg.gain_k0, cfg.gain_tau,
                cfg.delta_lambda, t_dof,
                z_blk, w_blk, u_blk,
                out_theta[:c], out_acc[:c], out_lam[:c], out_sigtr[:c],
            )
            n_snaps = 0

        accepted_total += int(n_acc)
        moments.update_batch(out_theta[:c])
        if sink is not None:
            block = ChainBlock(
                step0=done,
                thetas=out_theta[:c].copy(),
                accepted=out_acc[:c].copy(),
                lam=out_lam[:c].copy(),
                sigma_trace=out_sigtr[:c].copy(),
                fp_residual=out_fpresid[:c].copy() if scheme == "vbam" else None,
                fp_iters=out_fpiters[:c].copy() if scheme == "vbam" else None,
                sigma_diff=out_sigdiff[:c].copy() if scheme == "vbam" else None,
                snap_steps=out_snap_step[:n_snaps].copy() if n_snaps else None,
                snap_sigmas=out_snaps[:n_snaps].copy() if n_snaps else None,
            )
            sink.emit(block)
        done += c

    if scheme == "am_haario":
        final_sigma = m2 / (count - 1.0) + cfg.epsilon * np.eye(d) if count >= 2 else resolved.sigma0.entries.copy()
    elif scheme == "am_rr":
        final_sigma = m2 / (count - 1.0) if count >= 2 else (0.01 / d) * np.eye(d)
    elif scheme == "vbam":
        final_sigma = sigma.copy()
    else:
        final_sigma = resolved.sigma0.entries.copy()

    return ChainSummary(
        scheme=scheme,
        dim=d,
        n_steps=n_steps,
        acceptance_count=accepted_total,
        acceptance_rate=accepted_total / n_steps,
        final_theta=theta.copy(),
        final_log_target=float(lt),
        final_lambda=float(lam),
        final_sigma=final_sigma,
        chain_mean=moments.mean.copy(),
        chain_cov=moments.covariance() if moments.count >= 2 else None,
        band_violations=band_violations,
        fp_residual_max=fp_max if scheme == "vbam" else None,
        wall_time_s=time.perf_counter() - started,
        backend="numba" if compiled else "numpy",
    )
