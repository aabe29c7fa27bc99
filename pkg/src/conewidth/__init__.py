"""Constrained M-estimation over l1 balls with width-based error bounds.

Subpackages by responsibility: :mod:`conewidth.glm` (families and oracles),
:mod:`conewidth.geometry` (cones, projections, width estimators),
:mod:`conewidth.solver` (Frank-Wolfe and projected gradient),
:mod:`conewidth.bounds` (restricted-convexity probes and bound formulas),
:mod:`conewidth.experiment` (sweeps and CSV output), :mod:`conewidth.cli`.
"""

from .bounds import (
    BoundReport,
    RscEstimate,
    TunedBound,
    bound_report,
    calibrate_c1,
    matched_bound,
    mismatched_bound,
    naive_bound,
    optimize_t,
    projected_gradient_norm_at_truth,
    rsc_estimate,
    sample_size_threshold,
)
from .experiment import (
    ConfigError,
    ExperimentConfig,
    SweepResult,
    TrialRecord,
    fit_loglog_slope,
    make_truth,
    run_sweep,
    run_trial,
)
from .geometry import (
    ConeModel,
    FeasibleSet,
    WidthEstimate,
    descent_cone,
    gaussian_width_cone,
    global_width_l1,
    lmo_l1_ball,
    localized_width,
    project_l1_ball,
    project_onto_descent_cone,
    sup_linear_over_localized_set,
)
from .glm import (
    GlmFamily,
    ProblemInstance,
    cumulant_eval,
    gradient,
    hessian_quadratic_form,
    hessian_weight_lower_bound,
    loss,
    sample_design,
    sample_responses,
    sigma_max,
    simulate_instance,
)
from .solver import SolveReport, duality_gap, frank_wolfe, projected_gradient
from .rng import stream

__version__ = "0.1.0"
