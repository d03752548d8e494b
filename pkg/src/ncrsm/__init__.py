"""Identification of non-causal switching linear state-space models."""

from .model import (
    Dims,
    ModelParams,
    SwitchingSequence,
    ValidityReport,
    example1_params,
    spectral_stability_hint,
    validate,
)
from .simulate import (
    Trajectory,
    TrajectoryDivergenceError,
    draw_switching,
    simulate,
    simulate_model,
)
from .estep import (
    FilterDivergenceError,
    FilterResult,
    ModeAssignment,
    QValue,
    assign_modes,
    e_step,
    evaluate_Q,
    filter_sweep,
    kalman_gains,
    mode_loglik_table,
    observed_loglik,
)
from .mstep import m_step, update_A, update_C, update_pi, update_Sigma
from .em import EmConfig, EmReport, initialize, run

__version__ = "0.1.0"
