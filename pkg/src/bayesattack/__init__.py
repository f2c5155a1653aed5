"""Query-efficient black-box adversarial attacks via Bayesian optimization.

The attack searches a low-dimensional latent perturbation with a
Gaussian-process surrogate and expected improvement, upsamples candidates to
image resolution, and projects them onto the target l-inf ball, so each
candidate costs exactly one model query.
"""

from .acquisition import AcqSettings, ei_gradient, expected_improvement, maximize_acquisition
from .attack import (
    AttackOutcome,
    BayesOptAttack,
    ObjectiveRecord,
    margin_objective,
    objective_query,
    perturbed_image,
    project_linf,
)
from .data import LabeledImage, LinearProblem, find_idx_pair, load_idx, make_synthetic_linear
from .exceptions import (
    BadMagicError,
    BayesAttackError,
    CountMismatchError,
    DimensionMismatch,
    IdxFormatError,
    InvalidLabel,
    NormalizationError,
    NotPositiveDefinite,
    ProtocolError,
    RemoteModelError,
    ShapeMismatch,
    TransportError,
    TruncatedFileError,
    WeightsFormatError,
)
from .gp import (
    KernelHyperparams,
    MaternGP,
    default_hyperparams,
    fit_hyperparams,
    log_marginal_likelihood,
    matern52,
    matern52_matrix,
)
from .harness import AggregateReport, ExperimentSpec, derive_seed, report_table, run_experiment
from .models import (
    LinearAttackPlan,
    MLPLayer,
    MLPModel,
    MLPWeights,
    QueryCounter,
    RemoteModel,
    TargetModel,
    evaluate_accuracy,
    linear_attack_oracle,
    load_weights,
    mlp_forward,
    save_weights,
    train_mlp,
)
from .serve import ModelServer
from .upsample import interp_weights, upsample

__version__ = "0.1.0"

__all__ = [
    "AcqSettings",
    "AggregateReport",
    "AttackOutcome",
    "BadMagicError",
    "BayesAttackError",
    "BayesOptAttack",
    "CountMismatchError",
    "DimensionMismatch",
    "ExperimentSpec",
    "IdxFormatError",
    "InvalidLabel",
    "KernelHyperparams",
    "LabeledImage",
    "LinearAttackPlan",
    "LinearProblem",
    "MLPLayer",
    "MLPModel",
    "MLPWeights",
    "MaternGP",
    "ModelServer",
    "NormalizationError",
    "NotPositiveDefinite",
    "ObjectiveRecord",
    "ProtocolError",
    "QueryCounter",
    "RemoteModelError",
    "ShapeMismatch",
    "TargetModel",
    "TransportError",
    "TruncatedFileError",
    "WeightsFormatError",
    "default_hyperparams",
    "derive_seed",
    "ei_gradient",
    "evaluate_accuracy",
    "expected_improvement",
    "find_idx_pair",
    "fit_hyperparams",
    "interp_weights",
    "linear_attack_oracle",
    "load_idx",
    "load_weights",
    "log_marginal_likelihood",
    "margin_objective",
    "matern52",
    "matern52_matrix",
    "maximize_acquisition",
    "mlp_forward",
    "objective_query",
    "perturbed_image",
    "project_linf",
    "report_table",
    "run_experiment",
    "save_weights",
    "train_mlp",
    "upsample",
]
