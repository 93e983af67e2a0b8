"""Dead-layer failure modes of multi-start SGD on deep ReLU networks."""
from .network import (
    Architecture,
    ReadOut,
    affine_apply,
    forward_trace,
    layer_offsets,
    param_count,
    read_out,
    realize,
)
from .gradient import Batch, GradReport, empirical_risk, finite_diff_gradient, risk_gradient
from .sgd import InitSpec, StepSchedule, TrainConfig, TrajectorySet, init_params, run_all, run_trajectory, select_best, true_risk
from .inactivity import InactivityReport, assert_constant_realization, classify, is_layer_inactive, persistence_audit, risk_floor
from .bounds import (
    admissible_extremes,
    all_runs_inactive_prob,
    architecture_from_entry,
    inactivity_prob_exact,
    inactivity_prob_lower_bound,
    kappa_bound_check,
    make_schedule,
    risk_lower_bound,
)
from .data import DataModel, make_data_model
from .experiments import ExperimentConfig, mc_inactivity, replicate_once, run_experiment

__version__ = "0.1.0"
