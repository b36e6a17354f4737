"""Lasso-based secure state estimation for LTI systems under sparse sensor attacks."""
from .model import (
    AttackScenario,
    InstanceConfig,
    LtiSystem,
    StackedModel,
    Trajectory,
    build_stacked_model,
    generate_random_instance,
    is_observable,
    is_sparse_observable,
    simulate,
)
from .solvers import (
    SolverConfig,
    SseEstimate,
    default_lambda,
    lasso_objective,
    refine_state,
    soft_threshold,
    solve_lasso,
)
from .analysis import IrrepReport, irrepresentable_report, predict_lasso_success
from .oracle import OracleResult, exact_decode
from .observer import ObserverConfig, ObserverState, observer_init, observer_step, run_observer

__version__ = "0.1.0"
