"""Min-max regret of misspecified batch learning for finite-alphabet i.i.d. sources."""

from .combined import CombinedConfig, combined_bounds, combined_div_to_predictor, combined_div_to_set, combined_solve
from .divergence import DivergenceProfile, cond_div_to_predictor, div_to_set, divergence_profile, kl_single, mutual_info, project
from .family import (
    Alphabet,
    Interval,
    ParamGrid,
    ParamPoint,
    SubGrid,
    SuffStat,
    delta_epsilon,
    epsilon_n,
    log_count_weight,
    make_simplex_grid,
    make_uniform_grid,
    theta_epsilon,
)
from .oracle import OracleLimitError, enum_cond_div, enum_div_to_set, enum_regret_terms, enum_supervised
from .predictor import BetaCurve, PredictiveTable, Prior, add_beta, beta_curve, predictive_from_prior, seq_log_marginal
from .solver import (
    NonConvergenceError,
    RegretReport,
    SandwichResult,
    SolverConfig,
    SolverState,
    ab_step,
    bounds,
    capacity,
    solve,
    verify_sandwich,
)
from .supervised import (
    ChannelGrid,
    FeatureDist,
    ProductHypothesis,
    SupervisedConfig,
    SupStat,
    make_bsc_grid,
    make_product_grid,
    sup_div_to_set,
    sup_predictive,
    sup_regret_terms,
    sup_solve,
)

__version__ = "0.1.0"
