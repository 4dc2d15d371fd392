"""Benchmark target distributions and the data machinery behind them.

All targets are unnormalized log-densities returning -inf (never NaN) off
support.  The implementations are written nopython-compatible so each target
can hand the fused chain kernels a compiled twin of its log-density; the
plain callable is always available for direct evaluation and for the numpy
backend.

Unbounded benchmarks are truncated to a huge axis-aligned box (default 1e6
per axis).  The truncation is far outside any region a finite chain visits;
it exists so every target has bounded support.

Note on the strip density: the inner strip S carries density 1 and the outer
frame carries 36, i.e. the *inner* region is the low-density one.  That is
intentional and matches the benchmark definition this reproduces (other
variants in the literature flip the convention).
"""

from __future__ import annotations

import csv
import importlib.resources
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._accel import HAVE_NUMBA, jit_compile

DEFAULT_BOX = 1e6

_LOG_36 = math.log(36.0)

# Strip-density geometry: R = [-18, 18] x [-3, 3], S = [-0.5, 0.5] x [-3, 3].
STRIP_X1_HALF_WIDTH = 18.0
STRIP_X2_HALF_WIDTH = 3.0
STRIP_INNER_HALF_WIDTH = 0.5


class NonFiniteTrajectory(Exception):
    """An ODE trajectory left the finite floats (blow-up or bad parameters)."""


class TargetDensity:
    """Unnormalized log-density over R^d with a support predicate.

    ``log_density`` must be finite on the support and -inf off it.  When the
    callable is nopython-compatible, :attr:`compiled_log_density` lazily
    returns a numba-compiled twin for the fused kernels.
    """

    def __init__(
        self,
        dim: int,
        log_density: Callable[[np.ndarray], float],
        name: str = "",
        support: Callable[[np.ndarray], bool] | None = None,
        covariance: np.ndarray | None = None,
    ):
        self.dim = int(dim)
        self.log_density = log_density
        self.name = name
        self._support = support
        self.covariance = None if covariance is None else np.asarray(covariance, float)
        self._compiled = None

    def __call__(self, x) -> float:
        return float(self.log_density(np.asarray(x, dtype=float)))

    def in_support(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        if self._support is not None:
            return bool(self._support(x))
        return self.log_density(x) > -np.inf

    @property
    def compiled_log_density(self):
        """Numba-compiled log-density, or None when numba is unavailable."""
        if not HAVE_NUMBA:
            return None
        if self._compiled is None:
            self._compiled = jit_compile(self.log_density)
        return self._compiled

    def __repr__(self) -> str:
        return f"TargetDensity({self.name or 'anonymous'}, dim={self.dim})"


# ---------------------------------------------------------------------------
# Strip density


def strip_density(x) -> float:
    """Piecewise-constant density on R = [-18, 18] x [-3, 3].

    1 on the inner strip S = [-0.5, 0.5] x [-3, 3], 36 on R \\ S, 0 outside R.
    """
    x = np.asarray(x, dtype=float)
    if abs(x[0]) > STRIP_X1_HALF_WIDTH or abs(x[1]) > STRIP_X2_HALF_WIDTH:
        return 0.0
    if abs(x[0]) <= STRIP_INNER_HALF_WIDTH:
        return 1.0
    return 36.0


def _strip_logpdf(x):
    if abs(x[0]) > 18.0 or abs(x[1]) > 3.0:
        return -np.inf
    if abs(x[0]) <= 0.5:
        return 0.0
    return _LOG_36


def strip_mass_of_inner_region() -> float:
    """Probability of the inner strip S under the normalized density."""
    inner = 1.0 * (2 * STRIP_INNER_HALF_WIDTH) * (2 * STRIP_X2_HALF_WIDTH)
    outer = 36.0 * (2 * STRIP_X1_HALF_WIDTH - 2 * STRIP_INNER_HALF_WIDTH) * (
        2 * STRIP_X2_HALF_WIDTH
    )
    return inner / (inner + outer)


def strip_x1_marginal(x1) -> np.ndarray | float:
    """Normalized marginal density of the first coordinate.

    Piecewise constant: proportional to 1 on |x1| <= 0.5, to 36 on
    0.5 < |x1| <= 18, zero beyond.  Vectorized over x1.
    """
    x1 = np.asarray(x1, dtype=float)
    mass = 1.0 * 1.0 + 36.0 * 35.0  # per-unit-x2 weights, lengths 1 and 35
    inner = np.abs(x1) <= STRIP_INNER_HALF_WIDTH
    in_range = np.abs(x1) <= STRIP_X1_HALF_WIDTH
    dens = np.where(inner, 1.0 / mass, np.where(in_range, 36.0 / mass, 0.0))
    if dens.ndim == 0:
        return float(dens)
    return dens


def strip_covariance() -> np.ndarray:
    """Exact covariance of the strip density (coordinates are independent)."""
    mass = 1.0 + 36.0 * 35.0
    # E[x1^2]: inner integral 1/12, outer 2 * 36 * (18^3 - 0.5^3) / 3
    ex1_sq = (1.0 / 12.0 + 72.0 * (18.0**3 - 0.5**3) / 3.0) / mass
    ex2_sq = STRIP_X2_HALF_WIDTH**2 / 3.0  # uniform on [-3, 3]
    return np.diag([ex1_sq, ex2_sq])


def strip_target() -> TargetDensity:
    return TargetDensity(
        2, _strip_logpdf, name="strip", covariance=strip_covariance()
    )


# ---------------------------------------------------------------------------
# Gaussian targets


def gaussian_target(cov, mean=None, box: float = DEFAULT_BOX) -> TargetDensity:
    """Exact Gaussian log-density with the given covariance."""
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[0]
    mu = np.zeros(d) if mean is None else np.asarray(mean, dtype=float)
    chol = np.linalg.cholesky(cov)
    chol_inv = np.linalg.solve(chol, np.eye(d))
    const = -0.5 * d * math.log(2 * math.pi) - float(np.sum(np.log(np.diag(chol))))

    def logpdf(x):
        for i in range(x.shape[0]):
            if abs(x[i]) > box:
                return -np.inf
        y = chol_inv @ (x - mu)
        return const - 0.5 * (y @ y)

    return TargetDensity(d, logpdf, name=f"gaussian-{d}d", covariance=cov)


def gaussian_mmt_target(rng, dim: int, box: float = DEFAULT_BOX) -> TargetDensity:
    """N(0, M M^T) with the entries of M drawn once from the unit Gaussian.

    The random factor is drawn from ``rng``, so the target is reproducible
    from a seed; the true covariance is exposed for diagnostics.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    while True:
        m = rng.standard_normal((dim, dim))
        mmt = m @ m.T
        try:
            np.linalg.cholesky(mmt)
            break
        except np.linalg.LinAlgError:  # pragma: no cover - probability-zero retry
            continue
    target = gaussian_target(mmt, box=box)
    target.name = f"gauss-mmt-{dim}d"
    return target


# ---------------------------------------------------------------------------
# Banana-shaped density


def banana_log_density(x, bananicity: float) -> float:
    """log f = -x1^2/200 - (x2 + B x1^2 - 100 B)^2 / 2 - sum_{i>=3} x_i^2 / 2."""
    x = np.asarray(x, dtype=float)
    tail = 0.0
    for i in range(2, x.shape[0]):
        tail += x[i] * x[i]
    bend = x[1] + bananicity * x[0] * x[0] - 100.0 * bananicity
    return -x[0] * x[0] / 200.0 - 0.5 * bend * bend - 0.5 * tail


def banana_covariance(dim: int, bananicity: float) -> np.ndarray:
    """Exact covariance: x1 ~ N(0, 100), x2 | x1 ~ N(100B - B x1^2, 1).

    var(x2) = 1 + B^2 (E x1^4 - (E x1^2)^2) = 1 + 2e4 B^2; cross terms vanish
    by symmetry; the remaining coordinates are standard normal.
    """
    diag = np.ones(dim)
    diag[0] = 100.0
    diag[1] = 1.0 + 2.0e4 * bananicity**2
    return np.diag(diag)


def banana_target(
    dim: int = 20, bananicity: float = 0.1, box: float = DEFAULT_BOX
) -> TargetDensity:
    if dim < 2:
        raise ValueError("banana target needs dim >= 2")
    b = float(bananicity)

    def logpdf(x):
        tail = 0.0
        for i in range(x.shape[0]):
            if abs(x[i]) > box:
                return -np.inf
            if i >= 2:
                tail += x[i] * x[i]
        bend = x[1] + b * x[0] * x[0] - 100.0 * b
        return -x[0] * x[0] / 200.0 - 0.5 * bend * bend - 0.5 * tail

    return TargetDensity(
        dim, logpdf, name=f"banana-{dim}d", covariance=banana_covariance(dim, b)
    )


# ---------------------------------------------------------------------------
# ODE machinery


@dataclass
class OdeSystem:
    """Autonomous-friendly ODE with signature rhs(t, state, params)."""

    state_dim: int
    rhs: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    initial_state: np.ndarray

    def __post_init__(self):
        self.initial_state = np.asarray(self.initial_state, dtype=float)
        if self.initial_state.shape != (self.state_dim,):
            raise ValueError("initial state does not match state_dim")


def rk4_integrate(system: OdeSystem, params, t_grid, max_step: float | None = None):
    """Classical fourth-order Runge-Kutta on a fixed substep.

    The trajectory starts from ``system.initial_state`` at ``t_grid[0]`` and
    is returned at every grid point.  The substep is at most ``max_step``
    (default: 5% of the smallest grid spacing), so each grid interval is cut
    into an integer number of equal substeps.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 1:
        raise ValueError("t_grid must be a nonempty 1-d array")
    if t_grid.size > 1 and np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    params = np.asarray(params, dtype=float)
    if max_step is None:
        max_step = 0.05 * float(np.min(np.diff(t_grid))) if t_grid.size > 1 else 1.0
    if max_step <= 0:
        raise ValueError("max_step must be positive")

    out = np.empty((t_grid.size, system.state_dim))
    y = system.initial_state.copy()
    out[0] = y
    rhs = system.rhs
    for seg in range(t_grid.size - 1):
        t0, t1 = t_grid[seg], t_grid[seg + 1]
        nsub = max(1, int(math.ceil((t1 - t0) / max_step)))
        h = (t1 - t0) / nsub
        t = t0
        for _ in range(nsub):
            k1 = rhs(t, y, params)
            k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1, params)
            k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2, params)
            k4 = rhs(t + h, y + h * k3, params)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += h
        if not np.all(np.isfinite(y)):
            raise NonFiniteTrajectory(f"state left finite floats near t = {t1}")
        out[seg + 1] = y
    return out


# ---------------------------------------------------------------------------
# Chemical reaction model (five species, three sequential reactions)

CHEMICAL_A0 = 0.02090
CHEMICAL_REPORTED_RATES = (14.7, 1.53, 0.294)
CHEMICAL_NOISE_STD = 5e-4
CHEMICAL_DESIGN_TIMES = tuple(np.linspace(5.0, 50.0, 10))
CHEMICAL_PRIOR_BOUNDS = ((0.0, 50.0), (0.0, 10.0), (0.0, 5.0))


def chemical_rhs(t, y, k):
    """Rates for species (A, B, C, D, E) under A+B -> C, A+C -> D, A+D -> E.

    The B+C+D+E total is conserved: the last four rates sum to zero.
    """
    a, b, c, d = y[0], y[1], y[2], y[3]
    r1 = k[0] * a * b
    r2 = k[1] * a * c
    r3 = k[2] * a * d
    return np.array([-r1 - r2 - r3, -r1, r1 - r2, r2 - r3, r3])


def chemical_system() -> OdeSystem:
    y0 = np.array([CHEMICAL_A0, CHEMICAL_A0 / 3.0, 0.0, 0.0, 0.0])
    return OdeSystem(5, chemical_rhs, y0)


def chemical_posterior(
    dataset: "Dataset", prior_bounds=CHEMICAL_PRIOR_BOUNDS
) -> TargetDensity:
    """Log-posterior over the three reaction rates.

    Gaussian likelihood of the observed A concentrations against the
    integrated trajectory, flat prior on the given positive box, -inf for
    rates outside it.  Integration failure (non-finite state) maps to -inf.
    """
    if len(dataset.inputs) == 0:
        raise ValueError("dataset is empty")
    times = np.ascontiguousarray(dataset.inputs, dtype=float)
    if np.any(np.diff(times) <= 0) or times[0] <= 0:
        raise ValueError("observation times must be positive and increasing")
    obs = np.ascontiguousarray(dataset.observations, dtype=float)
    lo = np.array([b[0] for b in prior_bounds], dtype=float)
    hi = np.array([b[1] for b in prior_bounds], dtype=float)
    inv_two_var = 1.0 / (2.0 * dataset.noise_std**2)
    a0 = CHEMICAL_A0
    b0 = CHEMICAL_A0 / 3.0
    # Same substep rule as rk4_integrate on the grid {0} + times.
    grid = np.concatenate(([0.0], times))
    max_step = 0.05 * float(np.min(np.diff(grid)))
    n_obs = times.shape[0]

    def logpdf(theta):
        for i in range(3):
            if theta[i] <= lo[i] or theta[i] > hi[i]:
                return -np.inf
        k1 = theta[0]
        k2 = theta[1]
        k3 = theta[2]
        # Species E never feeds back into the others, so it is not tracked.
        a, b, c, d = a0, b0, 0.0, 0.0
        ll = 0.0
        t_prev = 0.0
        for idx in range(n_obs):
            span = times[idx] - t_prev
            nsub = int(np.ceil(span / max_step))
            if nsub < 1:
                nsub = 1
            h = span / nsub
            for _ in range(nsub):
                a1 = -k1 * a * b - k2 * a * c - k3 * a * d
                b1 = -k1 * a * b
                c1 = k1 * a * b - k2 * a * c
                d1 = k2 * a * c - k3 * a * d
                xa = a + 0.5 * h * a1
                xb = b + 0.5 * h * b1
                xc = c + 0.5 * h * c1
                xd = d + 0.5 * h * d1
                a2 = -k1 * xa * xb - k2 * xa * xc - k3 * xa * xd
                b2 = -k1 * xa * xb
                c2 = k1 * xa * xb - k2 * xa * xc
                d2 = k2 * xa * xc - k3 * xa * xd
                xa = a + 0.5 * h * a2
                xb = b + 0.5 * h * b2
                xc = c + 0.5 * h * c2
                xd = d + 0.5 * h * d2
                a3 = -k1 * xa * xb - k2 * xa * xc - k3 * xa * xd
                b3 = -k1 * xa * xb
                c3 = k1 * xa * xb - k2 * xa * xc
                d3 = k2 * xa * xc - k3 * xa * xd
                xa = a + h * a3
                xb = b + h * b3
                xc = c + h * c3
                xd = d + h * d3
                a4 = -k1 * xa * xb - k2 * xa * xc - k3 * xa * xd
                b4 = -k1 * xa * xb
                c4 = k1 * xa * xb - k2 * xa * xc
                d4 = k2 * xa * xc - k3 * xa * xd
                a += (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
                b += (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
                c += (h / 6.0) * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
                d += (h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
            if not np.isfinite(a):
                return -np.inf
            r = obs[idx] - a
            ll -= r * r * inv_two_var
            t_prev = times[idx]
        return ll

    return TargetDensity(3, logpdf, name="chemical-posterior")


# ---------------------------------------------------------------------------
# Monod growth model

MONOD_REPORTED_PARAMS = (0.153, 55.4)
MONOD_NOISE_STD = 0.008
MONOD_DESIGN_CONCENTRATIONS = (20.0, 40.0, 80.0, 120.0, 200.0, 300.0, 400.0)
MONOD_PRIOR_BOUNDS = ((0.0, 1.0), (0.0, 1e3))


def monod_prediction(x, theta1: float, theta2: float):
    """Growth rate theta1 * x / (theta2 + x) at substrate concentration x."""
    x = np.asarray(x, dtype=float)
    return theta1 * x / (theta2 + x)


def monod_posterior(dataset: "Dataset", prior_bounds=MONOD_PRIOR_BOUNDS) -> TargetDensity:
    """Log-posterior over (max growth rate, saturation constant).

    Gaussian likelihood of the observed rates, flat prior on
    (0, bounds] per coordinate.
    """
    if len(dataset.inputs) == 0:
        raise ValueError("dataset is empty")
    xs = np.ascontiguousarray(dataset.inputs, dtype=float)
    obs = np.ascontiguousarray(dataset.observations, dtype=float)
    inv_two_var = 1.0 / (2.0 * dataset.noise_std**2)
    hi1 = float(prior_bounds[0][1])
    hi2 = float(prior_bounds[1][1])
    n = xs.shape[0]

    def logpdf(theta):
        t1 = theta[0]
        t2 = theta[1]
        if t1 <= 0.0 or t1 > hi1 or t2 <= 0.0 or t2 > hi2:
            return -np.inf
        ll = 0.0
        for i in range(n):
            r = obs[i] - t1 * xs[i] / (t2 + xs[i])
            ll -= r * r * inv_two_var
        return ll

    return TargetDensity(2, logpdf, name="monod-posterior")


# ---------------------------------------------------------------------------
# Datasets


@dataclass
class Dataset:
    """Paired inputs/observations with the (known) observation noise scale.

    For synthetic data the generating parameters are recorded so acceptance
    checks can compare posterior summaries against them.
    """

    inputs: np.ndarray
    observations: np.ndarray
    noise_std: float
    true_params: tuple | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.observations = np.asarray(self.observations, dtype=float)
        if self.inputs.shape != self.observations.shape:
            raise ValueError("inputs and observations must have equal length")
        if self.noise_std <= 0:
            raise ValueError("noise_std must be positive")


def synthesize_dataset(
    rng, model: str, true_params, noise_std: float, design_points
) -> Dataset:
    """Forward-simulate a model at the design points and add Gaussian noise."""
    if noise_std <= 0:
        raise ValueError("noise_std must be positive")
    design = np.asarray(design_points, dtype=float)
    params = np.asarray(true_params, dtype=float)
    if model == "chemical":
        grid = np.concatenate(([0.0], design))
        trajectory = rk4_integrate(chemical_system(), params, grid)
        clean = trajectory[1:, 0]  # observed species: A
    elif model == "monod":
        clean = monod_prediction(design, params[0], params[1])
    else:
        raise ValueError(f"unknown model {model!r}; expected 'chemical' or 'monod'")
    noisy = clean + noise_std * rng.standard_normal(design.shape[0])
    return Dataset(design, noisy, noise_std, true_params=tuple(params))


def save_dataset_csv(dataset: Dataset, path, columns=("x", "y")) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for x, y in zip(dataset.inputs, dataset.observations):
            writer.writerow([repr(float(x)), repr(float(y))])


def load_dataset_csv(path, noise_std: float, true_params=None) -> Dataset:
    """Read a two-column CSV (header + one row per observation)."""
    xs, ys = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise ValueError(f"{path}: expected a two-column CSV with a header")
        for row in reader:
            if not row:
                continue
            xs.append(float(row[0]))
            ys.append(float(row[1]))
    return Dataset(np.array(xs), np.array(ys), noise_std, true_params=true_params)


def _data_path(name: str):
    return importlib.resources.files("vbam").joinpath("data", name)


def default_chemical_dataset() -> Dataset:
    """The shipped synthetic chemical dataset (generated at the reported rates)."""
    return load_dataset_csv(
        _data_path("chemical.csv"),
        CHEMICAL_NOISE_STD,
        true_params=CHEMICAL_REPORTED_RATES,
    )


def default_monod_dataset() -> Dataset:
    """The shipped synthetic growth-rate dataset."""
    return load_dataset_csv(
        _data_path("monod.csv"),
        MONOD_NOISE_STD,
        true_params=MONOD_REPORTED_PARAMS,
    )
