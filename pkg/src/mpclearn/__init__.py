"""Learning ReLU-network surrogates of constrained linear MPC controllers.

The pipeline: compute the maximal control invariant set of the constrained
system, sample states from it by hit-and-run, solve the condensed MPC QP
and differentiate its KKT system at every sample, then train networks on
the resulting (state, input, gradient) triplets with a gradient-matching
loss and evaluate them in closed loop.
"""

from .dataset import Dataset, SampleTriplet, generate, load, save, verify_problem_binding
from .evaluation import (
    CostResult,
    LsDemoResult,
    NmseResult,
    control_cost,
    evaluate_surrogate,
    gradient_ls_demo,
    nmse,
    trajectory_costs,
)
from .invariant import InvariantResult, max_control_invariant, pre_set
from .linprog import LpOutcome, LpStatus
from .mpc import (
    CondensedQp,
    ControlSolution,
    LinearSystem,
    MpcInfeasibleError,
    MpcProblem,
    closed_loop,
    condense,
    control_law,
    mpc_controller,
    problem_hash,
    qp_solve,
    sensitivity,
    simulate_step,
    two_dim_benchmark,
)
from .neural import (
    MlpArchitecture,
    MlpParams,
    StopReason,
    TrainConfig,
    TrainReport,
    forward,
    init_params,
    input_jacobian,
    load_params,
    loss_gradient,
    save_params,
    sobolev_loss,
    train,
)
from .polytope import (
    GeometryError,
    HPolytope,
    ProjectionLimitError,
    chebyshev_center,
    contains,
    intersect,
    is_subset,
    lp_solve,
    membership_mask,
    project,
    remove_redundant,
)
from .qp import DegenerateActiveSetError, QpSolution, QpSolverError, QpStatus, solve_qp
from .sampling import SamplerConfig, hit_and_run, sample_states

__version__ = "0.1.0"
