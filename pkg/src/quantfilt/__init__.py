"""Recursive Bayesian filtering and smoothing for linear state-space
models with quantized output measurements."""

from .model import (
    ExtendedSSM,
    Gaussian,
    LinearSSM,
    NumericalError,
    Quantizer,
    Trajectory,
    build_extended,
    quantize,
    region_bounds,
    simulate_trajectory,
)
from .likelihood import (
    GLRule,
    MixtureParams,
    SmoothQuantizerCfg,
    exact_likelihood,
    exact_loglikelihood,
    gl_rule,
    likelihood_mixture_params,
    mixture_likelihood,
    smooth_quantizer,
)
from .gaussian_filters import (
    GaussianSequence,
    UkfConfig,
    ekf_filter,
    kf_filter,
    qkf_filter,
    rts_smoother,
    ukf_filter,
)
from .gsf import (
    BackwardMixture,
    GaussianMixture,
    GsfResult,
    ReducedBackward,
    backward_init,
    backward_measure,
    backward_predict,
    backward_step,
    canonical_to_moment,
    gsf_filter,
    gsf_step,
    gss_combine_step,
    gss_smoother,
    mixture_reduce,
    moment_to_canonical,
)
from .particle import (
    McmcConfig,
    ParticleSet,
    PfResult,
    SmootherResult,
    mcmc_move,
    pf_filter,
    pf_step,
    ps_marginal,
    ps_rejection,
    resample,
    weighted_moments,
)
from .bench import (
    ExperimentConfig,
    RankReport,
    RunRecord,
    VariantSpec,
    mse_per_run,
    rank_report,
    run_monte_carlo,
    run_single,
)
from .config import load_config, render_config
from .streams import substream

__version__ = "0.1.0"
