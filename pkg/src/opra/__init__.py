"""High-confidence off-policy risk assessment for contextual bandits.

Estimate the reward CDF of a target policy from logged bandit feedback,
attach a finite-sample sup-norm band, and read off many risk functionals
(mean, CVaR, variance, distorted and CPT risks) with simultaneous
confidence intervals.
"""

__version__ = "0.1.0"

from .assessment import (
    BehaviorSource,
    ConfigError,
    ModelConfig,
    OpraConfig,
    RiskEstimate,
    RiskReport,
    run_opra,
)
from .bounds import (
    BoundInputs,
    confidence_band,
    eps_dkw,
    eps_dr,
    eps_estimated_policy,
    eps_is_bernstein,
    eps_is_hoeffding,
)
from .core import (
    AbsoluteContinuityError,
    BandMethod,
    ConfidenceBand,
    Interaction,
    LoggedDataset,
    StepCdf,
    StepFunction,
    UnknownContextError,
    eval_step_fn,
    sup_distance,
)
from .estimators import (
    EstimatorKind,
    crossfit_split,
    estimate_dm,
    estimate_dr,
    estimate_is,
    estimate_is_clip,
    estimate_mdr,
    estimate_wis,
    estimate_with_crossfit,
    monotone_clip,
)
from .policy import (
    MixturePolicy,
    Policy,
    SoftmaxPolicy,
    TabularPolicy,
    WeightStats,
    behavior_propensities,
    estimate_behavior_tabular,
    importance_weight,
    importance_weights,
    policy_from_dict,
    uniform_policy,
    weight_stats,
)
from .reward_model import (
    ConditionalCdfModel,
    ThresholdGrid,
    fit_per_threshold_logistic,
    fit_tabular,
    oracle_model,
)
from .risk import (
    CPT,
    CVaR,
    Distorted,
    Mean,
    MeanVariance,
    RiskFunctional,
    VaR,
    Variance,
    WeightedSum,
    lipschitz_constant,
    parse_risks,
)
from .simulation import (
    FiniteEnv,
    SweepConfig,
    SweepResult,
    classification_to_bandit,
    fixture,
    make_rng,
    run_sweep,
    sample_dataset,
    true_cdf,
    true_variance_decomposition,
)
