"""Budget-constrained treatment targeting via the conditional potential benefit."""

__version__ = "0.1.0"

from .cpb import (
    CpbModel,
    PseudoOutcomes,
    bias_decomposition,
    dr_learn_cpb,
    plugin_cpb,
    pseudo_outcome,
    pseudo_outcomes,
)
from .dataset import (
    Cohort,
    CovariateView,
    FoldAssignment,
    Schema,
    load_csv,
    make_folds,
    select_covariates,
    write_csv,
)
from .errors import (
    ArgumentError,
    CPBError,
    NumericError,
    ParseError,
    PositivityError,
    SchemaError,
)
from .learners import FittedRegression, LearnerSpec, fit_regression
from .nuisance import NuisanceFits, crossfit_nuisances
from .policy import (
    AupbcResult,
    PolicyEvaluation,
    QiniReport,
    aupbc,
    budget_quantile,
    estimate_value,
    gap_to_unconstrained,
    monotone_rearrangement,
    qini_curve,
)
from .restricted import (
    RestrictedScores,
    restricted_aupbc,
    restricted_scores_both,
    restricted_scores_contact_only,
    restricted_value,
)
from .sensitivity import SensitivityBand, optimal_gap_bound, sensitivity_bounds
from .simulation import (
    OracleValues,
    ScenarioSpec,
    SimulatedCohort,
    Truth,
    generate,
    mc_brute_force_value,
    oracle,
    regret_oracle,
)
