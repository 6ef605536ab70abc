"""sdeinfer: learn SDE drift and noise structure from trajectory data."""

__version__ = "0.1.0"

from .basis import BasisSet, BasisSpec, Domain, build_domain, make_basis, tensor_product
from .covariance import (
    CovarianceEstimate,
    estimate_constant,
    estimate_state_dependent,
    quadratic_variation,
    spectral_sqrt,
)
from .drift import (
    ConstantCov,
    CovModel,
    DiagonalCov,
    DriftEstimate,
    EstimatedCov,
    FullCov,
    assemble_diagonal,
    assemble_full,
    cov_from_model,
    estimate_drift,
    loss,
    solve,
)
from .expr import ScalarExpr, parse_expr
from .interacting import AgentSystem, KernelEstimate, learn_kernel, simulate_agents
from .metrics import (
    EmpiricalRho,
    Snapshot,
    l2_rho_error,
    snapshot,
    trajectory_error,
    wasserstein2,
)
from .model import Initial, SdeModel, TimeGrid, TrajectoryBundle, eval_drift
from .simulate import SimConfig, euler_maruyama, read_trajectories, replay, write_trajectories
from .spde import (
    SpdeSpec,
    compute_coupling,
    estimate_theta_constant,
    estimate_theta_piecewise,
    simulate_modes,
)
