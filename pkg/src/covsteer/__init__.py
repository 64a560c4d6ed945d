"""Covariance steering for discrete-time stochastic nonlinear systems."""

from .belief import (
    EPS_PD,
    EllipseLevelSet,
    GaussianBelief,
    cholesky_sqrt,
    ellipse_at_level,
    one_sigma_ellipse,
    psd_floor,
)
from .errors import (
    ConfigError,
    ContractError,
    CovsteerError,
    DegenerateCovarianceError,
    LinearizationError,
    PolicyExtractionError,
    PropagationError,
    SteeringInfeasibleError,
)
from .greedy import GreedyConfig, GreedyRun, StageDiagnostics, greedy_steer
from .lgcs import (
    CausalGainMatrix,
    StageLaw,
    SteeringSolution,
    expected_input_plan,
    first_law,
    predicted_cost,
    recover_laws,
    schur_feasible,
    solve_lgcs,
    spectral_feasible,
    terminal_moments,
    transform_gains,
)
from .lifted import LiftedSystem, build_lifted, open_loop_moments
from .linearize import LinearModel, linearize_at, linearize_at_goal
from .models import (
    DuffingParams,
    SystemModel,
    build_model,
    duffing_model,
    eval_dynamics,
    register_model,
)
from .montecarlo import McReport, simulate_closed_loop
from .unscented import SigmaSet, sigma_points, ut_propagate

__version__ = "0.1.0"
