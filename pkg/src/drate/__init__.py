"""Doubly robust average-treatment-effect estimation.

Nine estimator variants pair a propensity-score fit with two outcome
regressions, each drawn from a parametric (logistic/linear), semiparametric
(single-index kernel), or nonparametric (multivariate kernel) family, plus an
efficiency-analysis layer and a reproducible Monte Carlo engine.
"""

__version__ = "0.1.0"

from .aipw import (
    NuisanceFit,
    aipw_mean_control,
    aipw_mean_treated,
    estimate_all,
    estimate_ate,
    estimate_ate_with_nuisances,
)
from .data import (
    Backend,
    ColumnSchema,
    EstimateResult,
    EstimatorId,
    IndexDirections,
    ObservationSet,
    Violation,
    load_dataset,
    save_dataset,
    validate,
)
from .efficiency import (
    GenerativeTruth,
    VarianceRatio,
    VarianceReport,
    compare_variance,
    constant_ps_variance_factor,
    constant_ps_variance_gap,
    efficiency_bound_mc,
    efficiency_bound_plugin,
    variance_factor_curve,
)
from .errors import (
    ConfigError,
    DataError,
    DegenerateTargetError,
    DrateError,
    EmptyArmError,
    FitError,
    NonFiniteNuisanceError,
    PerturbationRangeError,
    RankDeficiencyError,
    SeparationError,
)
from .kernels import (
    EPS_CLIP,
    FixedBandwidth,
    IndexSmoother,
    KernelConfig,
    KernelPlan,
    MultivariateSmoother,
    RuleOfThumb,
    SmootherRole,
    fit_index_propensity,
    fit_index_regression,
    fit_multivariate_propensity,
    fit_multivariate_regression,
    resolve_bandwidth,
)
from .parametric import (
    LinearFit,
    LogisticFit,
    MisspecMode,
    MisspecSpec,
    apply_local_misspec,
    fit_linear,
    fit_logistic,
    predict_propensity_param,
)
from .simulation import (
    McReport,
    McRow,
    OrScenario,
    PsScenario,
    ScenarioConfig,
    calibrate_offset,
    generate_sample,
    make_ps_direction,
    run_monte_carlo,
    scenario_truth,
    warp_covariates,
)
