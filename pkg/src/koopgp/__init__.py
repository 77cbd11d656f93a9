"""Gaussian-process forecasting of nonlinear dynamics with spectrally
structured, trajectory-equivariant kernels."""

from .data import (
    Standardizer,
    TrainingPair,
    TrainingSet,
    Trajectory,
    apply_standardizer,
    load_trajectories,
    save_trajectories,
    standardize,
    window_dataset,
)
from .dynamics import (
    OdeSystem,
    linear2d_rhs,
    linear2d_system,
    make_corpus,
    predator_prey_printed_rhs,
    predator_prey_rhs,
    predator_prey_system,
    simulate,
    system_by_name,
)
from .spectral import SpectralPrior, Spectrum, default_prior, reparameterize, sample_spectrum
from .kernels import (
    KernelConfig,
    QuadratureWeights,
    covariance,
    default_config,
    gram,
    quadrature_weights,
    se_base,
    symmetrized_cross,
    temporal_feature,
)
from .gp_exact import (
    ExactModel,
    Forecast,
    fit_exact,
    nll,
    optimize_hyperparameters,
    predict,
    prior_model,
)
from .gp_sparse import SparseState, init_sparse, sparse_loss, sparse_predict, train_sparse
from .analysis import (
    BenchmarkSpec,
    InfoGainCurve,
    Report,
    empirical_info_gain,
    info_gain_curve,
    rmse,
    run_ablation,
    run_benchmark,
    run_info_gain_experiment,
)

__version__ = "0.1.0"
