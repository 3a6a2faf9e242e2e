"""Differential game between a single player and a controlled mass distribution.

The mass evolves by a continuity equation driven by a chosen velocity field;
the player steers an ODE. The package provides flow and density transport
solvers, the discrete lower value, and HJI residual checks for closed-form
candidate values.
"""

from .fields import (
    Admissibility,
    BoundsReport,
    ClampRamp,
    ConfigurationError,
    Constant,
    ControlSetA,
    LinearWindow,
    Schedule,
    ScheduleGapError,
    check_admissible,
    field_bounds,
    field_div,
    field_eval,
)
from .flow import IntegratorConfig, FlowSample, integrate_flow, inverse_flow, jacobian_det
from .density import (
    DomainOverflowError,
    GridDensity,
    NormReport,
    interval_integral,
    mass,
    first_moment,
    norms,
    sample_density,
    transport_density,
)
from .game import (
    BudgetError,
    CostSpec,
    PlayerDynamics,
    Scenario,
    SquaredMeanDistance,
    Trajectory,
    WindowMass,
    WindowOccupancy,
    ZeroRunning,
    discrete_lower_value,
    dpp_split_check,
    evaluate_cost,
    rollout,
    solve_lower_value,
    step_player,
)
from .isaacs import (
    HSchedule,
    MeanSquareValue,
    MonotoneWindowValue,
    WindowIndicator,
    WindowValue,
    coupling_term,
    hamiltonian,
    hji_residual,
    optimal_mass_field,
    solve_h_ode,
    value_mean_square,
    value_window,
)

__version__ = "0.1.0"
