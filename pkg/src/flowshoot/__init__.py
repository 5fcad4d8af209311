"""Energy-optimal trajectory planning for agent swarms in background flows.

A library and CLI that shoots initial control velocities so that agents
carried by a prescribed flow field reach a target distribution at the final
time, steering each agent along the coupled position/momentum dynamics and
scoring the terminal swarm with a grid KL divergence.
"""

from .density import (
    DensityGrid,
    GridSpec,
    InitialKind,
    InitialSpec,
    TargetKind,
    TargetSpec,
    kde,
    kl_divergence,
    sample_initial,
    target_density,
)
from .dynamics import (
    AgentState,
    IntegrationError,
    SwarmState,
    Trajectory,
    hamiltonian,
    integrate,
    rhs,
    straight_line_swarm,
    straight_line_trajectory,
)
from .flowfield import (
    FlowKind,
    FlowSpec,
    attractor_flow,
    circle_flow,
    eval_flow,
    eval_jacobian,
    eval_time_derivative,
    flow_from_name,
    gyre_flow,
    linear_flow,
    repeller_flow,
    stagnation_flow,
    vertical_flow,
    zero_flow,
)
from .linear_oracle import (
    LinearFlowSolution,
    analytic_initial_velocity,
    gramian,
    matrix_exp,
    min_energy_cost,
    solve_linear_shooting,
)
from .objective import (
    GradientError,
    ObjectiveContext,
    ObjectiveReport,
    boundary_penalty,
    control_energy,
    evaluate,
    gradient_fd,
    make_objective_callables,
    savings,
)
from .optimizer import (
    OptimResult,
    OptimizerOptions,
    TrialRecord,
    homotopy_solve,
    lbfgs_minimize,
    monte_carlo_study,
)

__version__ = "0.1.0"
