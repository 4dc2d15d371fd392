"""Fused per-chunk chain kernels.

Each kernel advances one Markov chain by ``len(U)`` steps over pre-drawn
variate blocks, mutating the state arrays in place and filling per-step
output arrays.  The kernels are plain numpy functions; when the numba
backend is selected they are compiled (together with the target's
log-density closure) into a single nopython unit, which is where the
package gets its throughput.  Both flavors run the same source, so the two
backends agree step for step.

Variate layout per chunk (run_chain draws these in this order):
  Z    (n, d)  standard normals for the proposal
  UMIX (n,)    uniforms for the mixture component choice (rr scheme only)
  W    (n,)    chi-square(dof) draws (Student-t proposals only)
  U    (n,)    uniforms for the accept/reject decision
"""

from __future__ import annotations

import numpy as np

from ._accel import HAVE_NUMBA, jit_compile, use_numba
from .vbakf import fixed_point_core, fixed_point_jit

_kernel_cache: dict = {}

# Acceptance probability is min(1, exp(lp - lt)) with the -inf conventions
# spelled out inline in each kernel: a candidate off support is always
# rejected; a move from off support onto it is always accepted.


def _build_vbam(logpdf, fp_core):
    def chunk(
        theta,
        sigma,
        m,
        p,
        lt,
        lam,
        step0,
        a_mat,
        q_mat,
        h_mat,
        nu0,
        mu1,
        mu2,
        fp_iters,
        fp_tol,
        rm_on,
        alpha_bar,
        gain_k0,
        gain_tau,
        delta_lam,
        t_dof,
        z_blk,
        w_blk,
        u_blk,
        snap_stride,
        out_theta,
        out_acc,
        out_lam,
        out_sigtr,
        out_fpresid,
        out_fpiters,
        out_sigdiff,
        out_snap_step,
        out_snaps,
    ):
        d = theta.shape[0]
        n = u_blk.shape[0]
        n_accepted = 0
        band_violations = 0
        n_snaps = 0
        for i in range(n):
            k = step0 + i + 1
            chol = np.linalg.cholesky(sigma)
            step = chol @ z_blk[i]
            if t_dof > 0.0:
                step = step * np.sqrt(t_dof / w_blk[i])
            prop = theta + np.sqrt(lam) * step
            lp = logpdf(prop)
            if lp == -np.inf:
                alpha = 0.0
            elif lp >= lt:
                alpha = 1.0
            else:
                alpha = np.exp(lp - lt)
            accepted = False
            if u_blk[i] < alpha:
                theta[:] = prop
                lt = lp
                n_accepted += 1
                accepted = True
            # Noise-adaptive filter step fed the post-decision sample
            # (repeats included).  rho = 1, B = I: the prediction leaves
            # nu and sigma unchanged.
            m_pred = a_mat @ m
            p_pred = a_mat @ p @ a_mat.T + q_mat
            p_pred = 0.5 * (p_pred + p_pred.T)
            w_prev = nu0 + (k - 1) - d - 1.0
            w_den = w_prev + 1.0
            m_new, p_new, sig_new, iters, resid = fp_core(
                m_pred, p_pred, sigma, theta, h_mat, w_prev, w_den, fp_iters, fp_tol
            )
            eigs = np.linalg.eigvalsh(0.5 * (sig_new + sig_new.T))
            if eigs[0] < mu1 or eigs[d - 1] > mu2:
                # Out-of-band covariance: keep the previous one and refresh
                # only the filter mean/covariance with a single update pass
                # (its covariance recomputation is discarded).
                band_violations += 1
                m_new, p_new, _sig, _it, _r = fp_core(
                    m_pred, p_pred, sigma, theta, h_mat, w_prev, w_den, 1, 0.0
                )
                out_sigdiff[i] = 0.0
            else:
                diff = sig_new - sigma
                out_sigdiff[i] = np.sqrt(np.sum(diff * diff))
                sigma[:] = sig_new
            m[:] = m_new
            p[:] = p_new
            if rm_on:
                gamma = gain_k0 / max(gain_k0, k**gain_tau)
                lam = np.exp(np.log(lam) + gamma * (alpha - alpha_bar))
                if lam < delta_lam:
                    lam = delta_lam
                elif lam > 1.0 / delta_lam:
                    lam = 1.0 / delta_lam
            out_theta[i, :] = theta
            out_acc[i] = accepted
            out_lam[i] = lam
            trace = 0.0
            for j in range(d):
                trace += sigma[j, j]
            out_sigtr[i] = trace
            out_fpresid[i] = resid
            out_fpiters[i] = iters
            if snap_stride > 0 and k % snap_stride == 0:
                out_snap_step[n_snaps] = k
                out_snaps[n_snaps, :, :] = sigma
                n_snaps += 1
        return lt, lam, n_accepted, band_violations, n_snaps

    return chunk


def _build_am(logpdf):
    def chunk(
        theta,
        sigma0,
        mean,
        m2,
        lt,
        lam,
        count0,
        step0,
        epsilon,
        rm_on,
        alpha_bar,
        gain_k0,
        gain_tau,
        delta_lam,
        t_dof,
        z_blk,
        w_blk,
        u_blk,
        snap_stride,
        out_theta,
        out_acc,
        out_lam,
        out_sigtr,
        out_snap_step,
        out_snaps,
    ):
        d = theta.shape[0]
        n = u_blk.shape[0]
        n_accepted = 0
        n_snaps = 0
        count = count0
        eye = np.eye(d)
        for i in range(n):
            k = step0 + i + 1
            if count >= 2:
                sigma = m2 / (count - 1.0) + epsilon * eye
            else:
                sigma = sigma0.copy()
            chol = np.linalg.cholesky(sigma)
            step = chol @ z_blk[i]
            if t_dof > 0.0:
                step = step * np.sqrt(t_dof / w_blk[i])
            prop = theta + np.sqrt(lam) * step
            lp = logpdf(prop)
            if lp == -np.inf:
                alpha = 0.0
            elif lp >= lt:
                alpha = 1.0
            else:
                alpha = np.exp(lp - lt)
            accepted = False
            if u_blk[i] < alpha:
                theta[:] = prop
                lt = lp
                n_accepted += 1
                accepted = True
            # Welford push of the post-decision sample.
            count += 1
            delta = theta - mean
            mean += delta / count
            m2 += np.outer(delta, theta - mean)
            if rm_on:
                gamma = gain_k0 / max(gain_k0, k**gain_tau)
                lam = np.exp(np.log(lam) + gamma * (alpha - alpha_bar))
                if lam < delta_lam:
                    lam = delta_lam
                elif lam > 1.0 / delta_lam:
                    lam = 1.0 / delta_lam
            out_theta[i, :] = theta
            out_acc[i] = accepted
            out_lam[i] = lam
            trace = 0.0
            for j in range(d):
                trace += sigma[j, j]
            out_sigtr[i] = trace
            if snap_stride > 0 and k % snap_stride == 0:
                out_snap_step[n_snaps] = k
                out_snaps[n_snaps, :, :] = sigma
                n_snaps += 1
        return lt, lam, n_accepted, count, n_snaps

    return chunk


def _build_rr(logpdf):
    def chunk(
        theta,
        mean,
        m2,
        lt,
        count0,
        step0,
        beta,
        z_blk,
        umix_blk,
        u_blk,
        snap_stride,
        out_theta,
        out_acc,
        out_lam,
        out_sigtr,
        out_snap_step,
        out_snaps,
    ):
        d = theta.shape[0]
        n = u_blk.shape[0]
        n_accepted = 0
        n_snaps = 0
        count = count0
        fixed_scale = 0.01 / d  # 0.1^2 / d
        emp_scale = 2.38**2 / d
        fixed_std = np.sqrt(fixed_scale)
        for i in range(n):
            k = step0 + i + 1
            prop = theta + fixed_std * z_blk[i]
            sig_trace = fixed_scale * d
            if k > 2 * d and count >= 2 and umix_blk[i] >= beta:
                cov = m2 / (count - 1.0)
                eigs = np.linalg.eigvalsh(cov)
                # A singular empirical covariance (possible early on) falls
                # back to the fixed kernel for this step.
                if eigs[0] > 1e-12 * max(1.0, eigs[d - 1]):
                    scaled = emp_scale * cov
                    chol = np.linalg.cholesky(scaled)
                    prop = theta + chol @ z_blk[i]
                    sig_trace = 0.0
                    for j in range(d):
                        sig_trace += scaled[j, j]
            lp = logpdf(prop)
            if lp == -np.inf:
                alpha = 0.0
            elif lp >= lt:
                alpha = 1.0
            else:
                alpha = np.exp(lp - lt)
            accepted = False
            if u_blk[i] < alpha:
                theta[:] = prop
                lt = lp
                n_accepted += 1
                accepted = True
            count += 1
            delta = theta - mean
            mean += delta / count
            m2 += np.outer(delta, theta - mean)
            out_theta[i, :] = theta
            out_acc[i] = accepted
            out_lam[i] = 1.0
            out_sigtr[i] = sig_trace
            if snap_stride > 0 and k % snap_stride == 0 and count >= 2:
                out_snap_step[n_snaps] = k
                out_snaps[n_snaps, :, :] = m2 / (count - 1.0)
                n_snaps += 1
        return lt, n_accepted, count, n_snaps

    return chunk


def _build_fixed(logpdf):
    def chunk(
        theta,
        chol0,
        lt,
        lam,
        step0,
        rm_on,
        alpha_bar,
        gain_k0,
        gain_tau,
        delta_lam,
        t_dof,
        z_blk,
        w_blk,
        u_blk,
        out_theta,
        out_acc,
        out_lam,
        out_sigtr,
    ):
        d = theta.shape[0]
        n = u_blk.shape[0]
        n_accepted = 0
        trace0 = 0.0
        for j in range(d):
            trace0 += chol0[j, j] ** 2
            for jj in range(j):
                trace0 += chol0[j, jj] ** 2
        for i in range(n):
            k = step0 + i + 1
            step = chol0 @ z_blk[i]
            if t_dof > 0.0:
                step = step * np.sqrt(t_dof / w_blk[i])
            prop = theta + np.sqrt(lam) * step
            lp = logpdf(prop)
            if lp == -np.inf:
                alpha = 0.0
            elif lp >= lt:
                alpha = 1.0
            else:
                alpha = np.exp(lp - lt)
            accepted = False
            if u_blk[i] < alpha:
                theta[:] = prop
                lt = lp
                n_accepted += 1
                accepted = True
            if rm_on:
                gamma = gain_k0 / max(gain_k0, k**gain_tau)
                lam = np.exp(np.log(lam) + gamma * (alpha - alpha_bar))
                if lam < delta_lam:
                    lam = delta_lam
                elif lam > 1.0 / delta_lam:
                    lam = 1.0 / delta_lam
            out_theta[i, :] = theta
            out_acc[i] = accepted
            out_lam[i] = lam
            out_sigtr[i] = trace0
        return lt, lam, n_accepted

    return chunk


_BUILDERS = {
    "vbam": _build_vbam,
    "am_haario": _build_am,
    "am_rr": _build_rr,
    "none": _build_fixed,
}


def make_chunk_kernel(scheme: str, target, backend: str | None = None):
    """Kernel for one scheme/target pair on the requested backend.

    Compiled kernels are cached per (scheme, log-density, backend) so a
    target reused across runs pays its compile cost once.
    """
    if scheme not in _BUILDERS:
        raise ValueError(f"unknown scheme {scheme!r}")
    compiled = use_numba(backend)
    key = (scheme, target.log_density, compiled)
    kernel = _kernel_cache.get(key)
    if kernel is not None:
        return kernel

    if compiled:
        logpdf = target.compiled_log_density
        if logpdf is None:  # pragma: no cover - numba missing
            raise RuntimeError("numba backend requested but numba is unavailable")
    else:
        logpdf = target.log_density

    if scheme == "vbam":
        fp = fixed_point_jit if compiled else fixed_point_core
        kernel = _build_vbam(logpdf, fp)
    else:
        kernel = _BUILDERS[scheme](logpdf)
    if compiled:
        kernel = jit_compile(kernel)
    _kernel_cache[key] = kernel
    return kernel
