"""Projection pursuit control with untrusted Q-value advice.

The package combines a robust baseline policy with Q-value advice by
projecting the advice action onto a ball around the baseline action.  It
ships exact oracles for finite MDPs and LTV systems, a receding-horizon
baseline, robustness certificates and an experiment harness.
"""

from .advice import (
    AdviceErrorSpec,
    QuadraticAdvice,
    TabularAdvice,
    advice_error,
    argmin_advice,
    constant_advice,
    exact_advice,
    ltv_exact_advice,
    perturbed_advice,
    perturbed_riccati_advice,
)
from .baseline import (
    AssumptionReport,
    MpcBaseline,
    TabularBaseline,
    check_assumptions,
    extract_feedback_gain,
    induced_chain,
    mpc_action,
    solve_ftocp,
    tabular_baseline_action,
)
from .envs import (
    FiniteMdp,
    LtvSystem,
    build_nonstationary_benchmark,
    build_tracking_benchmark,
    embed_state,
    random_deterministic_mdp,
    random_finite_mdp,
    random_ltv_system,
    step_finite,
    step_ltv,
)
from .errors import *  # noqa: F401,F403
from .harness import (
    ExperimentConfig,
    MetricsRow,
    dynamic_regret,
    nonstationary_report,
    ratio_of_expectations,
    run_experiment,
    sweep,
    trust_trace,
)
from .numerics import min_singular_value, solve_dare, solve_linear, spectral_norm
from .oracle import QStarTables, backward_induction, offline_optimal_ltv, opt_lower_bound, riccati_feedback
from .prop import (
    PropConfig,
    TrajectoryLog,
    approx_td_error,
    blackbox_budget,
    greybox_budget,
    project_to_ball,
    run_episode,
    run_finite_batch,
)
from .robustness import (
    ContractionCertificate,
    certify_contraction,
    certify_wasserstein_robustness,
    estimate_mpc_contraction,
    tv_distance,
    w1_indicator,
)

__version__ = "0.1.0"
