"""Two-step conditional logistic estimation of the complier causal effect
with one-sided non-compliance and repeated binary outcomes."""

from ._backend import BACKEND
from .errors import (
    ConvergenceError,
    EstimationError,
    NumericalError,
    NumericalWarning,
    NumericFailure,
    PrecisionError,
    SchemaError,
    SeparationError,
    SingularMatrixError,
    TSCLogitError,
    UndefinedRatioError,
)
from .estimator import (
    Dataset,
    DiscordantCounts,
    EstimateOptions,
    augment_discordant,
    closed_form_alphas,
    discordant_counts,
    estimate,
    itt_tr_estimates,
    step1_compliance,
    step2_conditional,
)
from .model import (
    CausalEstimate,
    CausalParams,
    ComplianceModel,
    Parametrization,
    SubjectRecord,
    causal_effect,
    design_row,
)
from .truth import TrueModelSpec
from .asymptotics import limits
from .simulation import Scenario, StudyReport, generate_dataset, run_study

__version__ = "0.1.0"
