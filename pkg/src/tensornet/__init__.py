"""Hermite-basis risk identities, moment-tensor reductions and teacher-student SGD for two-layer networks."""
from .ensembles import (
    AssumptionReport,
    WeightEnsemble,
    check_assumptions,
    make_centered_identity,
    make_constrained_student,
    make_identity,
    make_random_isotropic,
    make_simplex,
)
from .errors import InfeasibleError, PreconditionError, QuadratureError, ResourceGuardError
from .hermite import (
    Activation,
    MomentSummary,
    gaussian_pair_expectation,
    hermite_coefficients,
    hermite_eval,
    network_moments,
    polynomial,
    scaled_tanh,
)
from .risk import (
    EstimationErrorReport,
    GramPowerSums,
    RiskReport,
    correlation_bound_check,
    estimation_errors,
    gram_power_sums,
    lower_bound_certificate,
    population_mse,
    risk_report,
    verify_thm2_bound,
)
from .sgd import SgdConfig, SgdTrace, least_squares_baseline, make_teacher_sec6, replicate_figure1, sgd_run
from .tensors import (
    ReductionSpec,
    SymmetricTensor,
    build_moment_tensor,
    build_noisy_contraction,
    contract_pair,
    labels_from_tensor,
    noisy_labels,
    tensor_apply,
)

__version__ = "0.1.0"
