"""Differentially private online learning with a random-prefix softmax over dyadic blocks."""

__version__ = "0.1.0"

from .core import (
    ETA_CAP,
    GapProfile,
    InvalidLossError,
    InvalidParameterError,
    NoUniqueBestActionError,
    PrivacyParams,
    ProtocolViolationError,
    block_end,
    block_of,
    block_start,
    eta_from_epsilon,
    gap_profile_from_means,
    prefix_window,
    sample_categorical,
    softmax_weights,
    theorem_bound,
)
from .environments import (
    Environment,
    enumerate_outcomes,
    environment_from_spec,
    environment_to_spec,
    make_bernoulli,
    make_correlated,
    make_deterministic,
    make_finite_support,
    sample_round,
)
from .algorithms import (
    DyadicLaplaceRNM,
    FixedAction,
    FollowTheLeader,
    Hedge,
    PolicySpec,
    RegretTrace,
    RpSoftmax,
    default_checkpoints,
    run_episode,
    run_trials,
)
from .privacy_audit import (
    AuditBudgetError,
    AuditReport,
    OutputLaw,
    audit_sweep,
    exact_block_law,
    exact_output_law,
    pointwise_ratio,
    prefix_mechanism_audit,
    sample_output_law,
    total_variation,
)
from .analysis import (
    BoundCheck,
    FmEstimate,
    clock_bound_check,
    fm_exact,
    fm_exact_curve,
    fm_monte_carlo,
    hoeffding_bound,
    hoeffding_check,
    inequality_suite,
    master_bound_check,
    master_bound_value,
    regret_summary,
    theorem_bound_check,
)
