"""Structure-preserving Lagrangian trajectory solver for 1-D nonlinear
Fokker-Planck equations with nonlocal interactions."""

from .density import DensitySample, density_from_trajectory, merge_particles, particle_masses
from .diagnostics import (
    EnergyReport,
    detect_steady,
    discrete_energy,
    dissipation_bound,
    relative_energy,
    steady_residual,
)
from .grid import (
    LagrangianGrid,
    cell_div,
    centered_diff,
    error_norms,
    forward_diff,
    inner_cell,
    inner_node,
    moving_mesh_weights,
)
from .problems import (
    EXAMPLE_IDS,
    InternalEnergy,
    Mobility,
    ProblemSpec,
    SplitKernel,
    SplitPotential,
    build_example,
    validate_spec,
)
from .stepper import (
    LeftAdmissibleSet,
    NewtonFailure,
    NonlocalSums,
    SimulationTrace,
    SolverConfig,
    SolverError,
    StepFailure,
    StructureViolation,
    TrajectoryState,
    advance,
    functional_J,
    grad_check,
    newton_solve,
    nonlocal_sums,
    run_simulation,
    step_residual,
)
from .waiting import WaitingTimeRecord, boundary_driving_term, estimate_waiting_time

__version__ = "0.1.0"
