"""Adaptive random-walk Metropolis with Kalman-filter driven covariance.

The sampler family:

* plain random-walk Metropolis (``scheme="none"``),
* covariance adaptation from the chain history (``"am_haario"``),
* the mixture-kernel variant (``"am_rr"``),
* covariance adaptation through a noise-adaptive Kalman filter (``"vbam"``),

plus the benchmark targets, convergence diagnostics, and a batch CLI.
"""

from ._accel import HAVE_NUMBA, NUMBA_DEFAULT
from .diagnostics import (
    DensityDifference,
    Histogram1D,
    StreamingMoments,
    acceptance_trace,
    density_difference,
    ergodic_average,
    ess_batch_means,
    suboptimality_factor,
)
from .gaussian import (
    NotPositiveDefinite,
    SpdMatrix,
    cholesky,
    frobenius_norm,
    sample_mvn,
    sample_student_t,
    within_band,
)
from .kalman import (
    GaussianState,
    StateSpaceModel,
    UniformConditionsReport,
    check_uniform_conditions,
    controllability_gramian,
    kf_predict,
    kf_update,
    observability_gramian,
)
from .mcmc import (
    AcceptanceDecision,
    AdaptationConfig,
    CallbackSink,
    ChainBlock,
    ChainInit,
    ChainState,
    ChainSummary,
    CollectSink,
    am_covariance_update,
    initial_chain_state,
    metropolis_step,
    rm_scale_update,
    rr_propose,
    run_chain,
    vbam_step,
)
from .targets import (
    Dataset,
    NonFiniteTrajectory,
    OdeSystem,
    TargetDensity,
    banana_log_density,
    banana_target,
    chemical_posterior,
    chemical_system,
    default_chemical_dataset,
    default_monod_dataset,
    gaussian_mmt_target,
    gaussian_target,
    load_dataset_csv,
    monod_posterior,
    monod_prediction,
    rk4_integrate,
    save_dataset_csv,
    strip_density,
    strip_target,
    strip_x1_marginal,
    synthesize_dataset,
)
from .vbakf import (
    NoiseBelief,
    VbakfConfig,
    VbakfState,
    vbakf_predict,
    vbakf_step,
    vbakf_update,
)

__version__ = "0.1.0"
