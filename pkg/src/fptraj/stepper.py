"""Implicit convex-splitting time step for the trajectory system.

One step advances the particle positions x by solving the nonlinear
difference equations in which the convex pieces (internal energy, V_c,
W_c) are treated implicitly and the concave pieces (V_e, W_e)
explicitly.  The interior rows are the gradient of a convex functional
J, so the Newton iteration with bisection damping is globally reliable
inside the admissible set of strictly increasing node vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .grid import LagrangianGrid, centered_diff
from .interactions import pairwise_sum
from .problems import ProblemSpec, SplitKernel

__all__ = [
    "SolverError",
    "LeftAdmissibleSet",
    "NewtonFailure",
    "StepFailure",
    "StructureViolation",
    "SolverConfig",
    "TrajectoryState",
    "NonlocalSums",
    "nonlocal_sums",
    "step_residual",
    "functional_J",
    "grad_check",
    "newton_solve",
    "advance",
    "run_simulation",
    "SimulationTrace",
]


class SolverError(RuntimeError):
    """Base class for solver failures."""


class LeftAdmissibleSet(SolverError):
    """A position vector lost strict monotonicity."""


class NewtonFailure(SolverError):
    """The Newton iteration for one step did not converge."""


class StepFailure(SolverError):
    """A time step failed even after the single tau/2 retry."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


class StructureViolation(SolverError):
    """A structural invariant (energy decrease, ordering) broke: a bug."""


@dataclass(frozen=True)
class SolverConfig:
    """Time step size and Newton/merging knobs."""

    tau: float
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    damping_shrink: float = 0.5
    merge_tol: float = 1e-9
    max_steps: int = 10**9

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")
        if self.newton_tol <= 0.0:
            raise ValueError("newton_tol must be positive")
        if not 0.0 < self.damping_shrink < 1.0:
            raise ValueError("damping_shrink must lie in (0, 1)")


@dataclass(frozen=True)
class TrajectoryState:
    """Particle positions plus the (frozen) reference-grid data.

    ``u0_nodes``/``u0_cells`` are the initial-density samples the scheme
    keeps using at later times; after a merge they are rebuilt so that
    node mass = weight * u0 is preserved exactly.
    """

    x: np.ndarray
    t: float
    step: int
    u0_nodes: np.ndarray
    grid: LagrangianGrid
    u0_cells: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=float)
        if x.size != self.grid.X.size:
            raise ValueError("positions and grid size mismatch")
        if np.any(np.diff(x) <= 0.0):
            raise LeftAdmissibleSet("positions must be strictly increasing")
        object.__setattr__(self, "x", x)

    @classmethod
    def initial(cls, spec: ProblemSpec, grid: LagrangianGrid) -> "TrajectoryState":
        u0n = np.asarray(spec.u0(grid.X), dtype=float).copy()
        if not spec.pinned:
            # the interface law assumes exact vacuum at the end labels
            u0n[0] = 0.0
            u0n[-1] = 0.0
        u0c = np.asarray(spec.u0(grid.midpoints), dtype=float)
        return cls(
            x=grid.X.copy(), t=0.0, step=0, u0_nodes=u0n, grid=grid, u0_cells=u0c
        )

    @property
    def masses(self) -> np.ndarray:
        return self.grid.node_weights * self.u0_nodes

    def min_gap(self) -> float:
        return float(np.min(np.diff(self.x)))


@dataclass(frozen=True)
class NonlocalSums:
    """Mass-weighted kernel sums: implicit force, explicit force, and the
    diagonal derivative used by the Newton matrix."""

    S_c: np.ndarray
    S_e: np.ndarray
    S_c_prime: np.ndarray


def _kernel_pv(kernel: SplitKernel) -> Optional[float]:
    if kernel.kink_at_zero is None:
        return None
    lo, hi = kernel.kink_at_zero
    return 0.5 * (lo + hi)


def kernel_convex_force(kernel: SplitKernel, x, masses):
    """(S_c, S_c') with both argument slots at the same positions."""
    if kernel.is_zero:
        z = np.zeros_like(x)
        return z, z.copy()
    if kernel.fast is not None:
        return kernel.fast.convex_force(x, masses)
    pv = _kernel_pv(kernel)
    s_c = pairwise_sum(x, x, masses, kernel.W_c_prime, kink_value=pv)
    dd_pv = 0.0 if pv is not None else None
    s_cp = pairwise_sum(x, x, masses, kernel.W_c_double_prime, kink_value=dd_pv)
    return s_c, s_cp


def kernel_concave_force(kernel: SplitKernel, x, masses):
    if kernel.is_zero:
        return np.zeros_like(x)
    if kernel.fast is not None:
        return kernel.fast.concave_force(x, masses)
    return pairwise_sum(x, x, masses, kernel.W_e_prime, kink_value=_kernel_pv(kernel))


def kernel_energy_fields(kernel: SplitKernel, x, masses):
    """Node fields sum_j m_j W_c(x_i-x_j) and sum_j m_j W_e(x_i-x_j)."""
    if kernel.is_zero:
        z = np.zeros_like(x)
        return z, z.copy()
    if kernel.fast is not None:
        return (
            kernel.fast.convex_energy_field(x, masses),
            kernel.fast.concave_energy_field(x, masses),
        )
    wc = pairwise_sum(x, x, masses, kernel.W_c)
    we = pairwise_sum(x, x, masses, kernel.W_e)
    return wc, we


def kernel_convex_energy_field(kernel: SplitKernel, x, masses):
    """Node field sum_j m_j W_c(x_i-x_j) only (the step functional's term)."""
    if kernel.is_zero:
        return np.zeros_like(x)
    if kernel.fast is not None:
        return kernel.fast.convex_energy_field(x, masses)
    return pairwise_sum(x, x, masses, kernel.W_c)


def problem_fields(spec: ProblemSpec, grid: LagrangianGrid):
    """Initial-density samples at nodes and cell midpoints."""
    u0n = np.asarray(spec.u0(grid.X), dtype=float).copy()
    if not spec.pinned:
        u0n[0] = 0.0
        u0n[-1] = 0.0
    u0c = np.asarray(spec.u0(grid.midpoints), dtype=float)
    return u0n, u0c


def nonlocal_sums(
    x_eval,
    x_old,
    spec: ProblemSpec,
    grid: Optional[LagrangianGrid] = None,
    masses=None,
) -> NonlocalSums:
    """Kernel force sums: implicit parts at x_eval, explicit at x_old."""
    x_eval = np.asarray(x_eval, dtype=float)
    x_old = np.asarray(x_old, dtype=float)
    for v in (x_eval, x_old):
        if np.any(np.diff(v) <= 0.0):
            raise LeftAdmissibleSet("positions must be strictly increasing")
    if masses is None:
        if grid is None:
            raise ValueError("need either masses or a grid")
        u0n, _ = problem_fields(spec, grid)
        masses = grid.node_weights * u0n
    s_c, s_cp = kernel_convex_force(spec.kernel, x_eval, masses)
    s_e = kernel_concave_force(spec.kernel, x_old, masses)
    return NonlocalSums(S_c=s_c, S_e=s_e, S_c_prime=s_cp)


# ---------------------------------------------------------------------------
# per-step workspace


class _StepWork:
    """Everything about one step that is fixed during the Newton solve."""

    def __init__(self, spec, grid, x_old, tau, u0_nodes=None, u0_cells=None):
        if u0_nodes is None or u0_cells is None:
            u0_nodes, u0_cells = problem_fields(spec, grid)
        self.spec = spec
        self.grid = grid
        self.tau = float(tau)
        self.x_old = np.asarray(x_old, dtype=float)
        self.u0n = np.asarray(u0_nodes, dtype=float)
        self.u0c = np.asarray(u0_cells, dtype=float)
        self.dX = grid.cell_widths
        self.w = grid.node_weights
        self.masses = self.w * self.u0n
        self.pinned = spec.pinned
        self.f0 = spec.mobility.f_prime_zero

        jac_old = centered_diff(self.x_old, self.dX)
        self.a = spec.mobility.drag_weight(self.u0n, jac_old)
        self.ve_old = np.asarray(spec.potential.V_e_prime(self.x_old), dtype=float)
        self.se_old = kernel_concave_force(spec.kernel, self.x_old, self.masses)
        # explicit linear coefficient of J: -<m*(V_e'(x^n)+S_e^n), z>
        self.lin = self.masses * (self.ve_old + self.se_old)
        if not self.pinned:
            self.du0_left = (self.u0n[1] - self.u0n[0]) / self.dX[0]
            self.du0_right = (self.u0n[-1] - self.u0n[-2]) / self.dX[-1]

    # -- residual -----------------------------------------------------

    def convex_forces(self, x_new):
        return kernel_convex_force(self.spec.kernel, x_new, self.masses)

    def residual(self, x_new, s_c=None):
        q = np.diff(x_new) / self.dX
        if np.any(q <= 0.0):
            raise LeftAdmissibleSet("left the admissible set")
        if s_c is None:
            s_c, _ = self.convex_forces(x_new)
        energy = self.spec.energy
        flux = energy.flux_potential(self.u0c / q)
        res = np.empty_like(x_new)
        rate = (x_new - self.x_old) / self.tau
        vc = np.asarray(self.spec.potential.V_c_prime(x_new), dtype=float)
        res[1:-1] = (
            self.a[1:-1] * rate[1:-1]
            + np.diff(flux) / self.w[1:-1]
            + self.u0n[1:-1]
            * (vc[1:-1] - self.ve_old[1:-1] + s_c[1:-1] - self.se_old[1:-1])
        )
        if self.pinned:
            res[0] = x_new[0] - self.grid.X[0]
            res[-1] = x_new[-1] - self.grid.X[-1]
        else:
            hdd = self.spec.energy.H_double_prime
            qL, qR = q[0], q[-1]
            res[0] = rate[0] + self.f0 * (
                float(hdd(self.u0n[0] / qL)) * self.du0_left / qL**2
                + vc[0]
                - self.ve_old[0]
                + s_c[0]
                - self.se_old[0]
            )
            res[-1] = rate[-1] + self.f0 * (
                float(hdd(self.u0n[-1] / qR)) * self.du0_right / qR**2
                + vc[-1]
                - self.ve_old[-1]
                + s_c[-1]
                - self.se_old[-1]
            )
        return res

    # -- step functional ----------------------------------------------

    def functional(self, z):
        q = np.diff(z) / self.dX
        if np.any(q <= 0.0):
            return math.inf
        dz = z - self.x_old
        quad = 0.5 / self.tau * float(np.sum(self.w * self.a * dz * dz))
        hterm = float(np.sum(self.dX * np.asarray(self.spec.energy.H(self.u0c / q)) * q))
        vterm = float(np.sum(self.masses * np.asarray(self.spec.potential.V_c(z))))
        if self.spec.kernel.is_zero:
            wterm = 0.0
        else:
            wc_field = kernel_convex_energy_field(self.spec.kernel, z, self.masses)
            wterm = 0.5 * float(np.sum(self.masses * wc_field))
        lin = float(np.sum(self.lin * z))
        total = quad + hterm + vterm + wterm - lin
        return total if np.isfinite(total) else math.inf

    def residual_merit(self, z):
        if np.any(np.diff(z) <= 0.0):
            return math.inf
        res = self.residual(z)
        return 0.5 * float(np.sum(self.w * res * res))

    def merit(self, z):
        return self.functional(z) if self.pinned else self.residual_merit(z)

    # -- Newton matrix --------------------------------------------------

    def newton_matrix(self, x_new, s_c_prime):
        q = np.diff(x_new) / self.dX
        hdd_cells = np.asarray(self.spec.energy.H_double_prime(self.u0c / q))
        c = self.u0c**2 / q**3 * hdd_cells
        vcc = np.asarray(self.spec.potential.V_c_double_prime(x_new), dtype=float)
        n = x_new.size
        diag = np.empty(n)
        lower = np.zeros(n)
        upper = np.zeros(n)
        cl = c[:-1] / self.dX[:-1]
        cr = c[1:] / self.dX[1:]
        diag[1:-1] = (
            self.a[1:-1] / self.tau
            + self.u0n[1:-1] * (vcc[1:-1] + s_c_prime[1:-1])
            + (cl + cr) / self.w[1:-1]
        )
        lower[1:-1] = -cl / self.w[1:-1]
        upper[1:-1] = -cr / self.w[1:-1]
        if self.pinned:
            diag[0] = 1.0
            diag[-1] = 1.0
        else:
            hdd = self.spec.energy.H_double_prime
            qL, qR = q[0], q[-1]
            gpL = -2.0 * float(hdd(self.u0n[0] / qL)) * self.du0_left / qL**3
            gpR = -2.0 * float(hdd(self.u0n[-1] / qR)) * self.du0_right / qR**3
            diag[0] = 1.0 / self.tau + self.f0 * (
                -gpL / self.dX[0] + vcc[0] + s_c_prime[0]
            )
            upper[0] = self.f0 * gpL / self.dX[0]
            diag[-1] = 1.0 / self.tau + self.f0 * (
                gpR / self.dX[-1] + vcc[-1] + s_c_prime[-1]
            )
            lower[-1] = -self.f0 * gpR / self.dX[-1]
        return lower, diag, upper


def _solve_tridiagonal(lower, diag, upper, rhs):
    n = diag.size
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1, :] = diag
    ab[2, :-1] = lower[1:]
    return solve_banded((1, 1), ab, rhs, check_finite=False)


# ---------------------------------------------------------------------------
# public operations


def step_residual(x_new, x_old, spec, grid, config, u0_nodes=None, u0_cells=None):
    """Row-wise defect of the implicit step equations at x_new."""
    work = _StepWork(spec, grid, x_old, config.tau, u0_nodes, u0_cells)
    return work.residual(np.asarray(x_new, dtype=float))


def functional_J(z, x_old, spec, grid, config, u0_nodes=None, u0_cells=None):
    """Convex step functional; +inf outside the admissible set."""
    work = _StepWork(spec, grid, x_old, config.tau, u0_nodes, u0_cells)
    return work.functional(np.asarray(z, dtype=float))


def grad_check(
    z,
    x_old,
    spec,
    grid,
    config,
    delta=1e-6,
    n_directions=8,
    directions=None,
    rng=None,
):
    """Worst relative mismatch between the finite-difference directional
    derivative of the step functional and the residual inner product.

    Directions vanish at both boundary nodes, where the functional's
    gradient and the step equations part ways in free mode.
    """
    z = np.asarray(z, dtype=float)
    work_old = _StepWork(spec, grid, x_old, config.tau)
    res = work_old.residual(z)
    if directions is None:
        rng = rng or np.random.default_rng(0)
        directions = []
        for _ in range(n_directions):
            v = np.zeros_like(z)
            v[1:-1] = rng.uniform(-1.0, 1.0, z.size - 2)
            scale = np.max(np.abs(v))
            if scale > 0:
                v /= scale
            directions.append(v)
    worst = 0.0
    for v in directions:
        v = np.asarray(v, dtype=float)
        ip = float(np.sum(work_old.w * res * v))
        d = delta
        for _ in range(20):
            zp = z + d * v
            zm = z - d * v
            if np.all(np.diff(zp) > 0) and np.all(np.diff(zm) > 0):
                break
            d *= 0.1
        else:
            raise LeftAdmissibleSet("could not stay admissible while perturbing")
        fd = (work_old.functional(zp) - work_old.functional(zm)) / (2.0 * d)
        worst = max(worst, abs(fd - ip) / max(1.0, abs(ip), abs(fd)))
    return worst


def newton_solve(
    x_old,
    spec,
    grid,
    config,
    u0_nodes=None,
    u0_cells=None,
    tau=None,
    merit_trace=None,
):
    """Solve one implicit step by damped Newton iteration.

    Returns (x_new, iterations, final_residual_max_norm).  The iterate
    stays in the admissible set; a sub-tolerance update is discarded so
    that discrete steady states are exact fixed points of the step map.
    """
    work = _StepWork(
        spec, grid, np.asarray(x_old, dtype=float), tau or config.tau, u0_nodes, u0_cells
    )
    x = work.x_old.copy()
    merit_curr = None
    for iteration in range(1, config.newton_max_iter + 1):
        s_c, s_cp = work.convex_forces(x)
        res = work.residual(x, s_c=s_c)
        lower, diag, upper = work.newton_matrix(x, s_cp)
        try:
            delta = _solve_tridiagonal(lower, diag, upper, -res)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
            raise NewtonFailure(f"singular Newton matrix: {exc}") from exc
        if not np.all(np.isfinite(delta)):
            raise NewtonFailure("non-finite Newton update")
        dmax = float(np.max(np.abs(delta)))
        if merit_trace is not None:
            merit_trace.append(work.functional(x))
        if dmax <= config.newton_tol:
            return x, iteration, float(np.max(np.abs(res)))
        if merit_curr is None:
            merit_curr = work.merit(x)
        alpha = 1.0
        slack = 1e-13 * (1.0 + abs(merit_curr))
        while True:
            cand = x + alpha * delta
            if np.all(np.diff(cand) > 0.0):
                merit_cand = work.merit(cand)
                if merit_cand <= merit_curr + slack:
                    x = cand
                    merit_curr = merit_cand
                    break
            alpha *= config.damping_shrink
            if alpha * dmax < 1e-14:
                raise NewtonFailure("damping underflow without merit decrease")
    raise NewtonFailure(f"no convergence in {config.newton_max_iter} iterations")


# ---------------------------------------------------------------------------
# time marching


@dataclass
class StepRecord:
    t: float
    tau: float
    e_old: float
    e_new: float
    e_c: float
    e_e: float
    dissipation_bound: float
    newton_iterations: int
    merge_count: int
    total_mass: float
    min_gap: float
    min_density: float
    energy_chain: object  # EnergyReport of the state the run continues from


def _advance_full(state, spec, config, energy_old=None, tau=None):
    from . import density as _density
    from . import diagnostics as _diag

    tau_step = tau if tau is not None else config.tau
    grid = state.grid
    try:
        x_new, iters, _ = newton_solve(
            state.x, spec, grid, config,
            u0_nodes=state.u0_nodes, u0_cells=state.u0_cells, tau=tau_step,
        )
    except NewtonFailure:
        tau_step = 0.5 * tau_step
        x_new, iters, _ = newton_solve(
            state.x, spec, grid, config,
            u0_nodes=state.u0_nodes, u0_cells=state.u0_cells, tau=tau_step,
        )

    e_old = energy_old if energy_old is not None else _diag.discrete_energy(state, spec)
    candidate = TrajectoryState(
        x=x_new,
        t=state.t + tau_step,
        step=state.step + 1,
        u0_nodes=state.u0_nodes,
        grid=grid,
        u0_cells=state.u0_cells,
    )
    e_new = _diag.discrete_energy(candidate, spec)
    bound = _diag.dissipation_bound(
        x_new, state.x, spec, grid, tau_step, u0_nodes=state.u0_nodes
    )
    if e_new.E > e_old.E + 1e-10 * (1.0 + abs(e_old.E)):
        raise StructureViolation(
            f"discrete energy increased: {e_old.E!r} -> {e_new.E!r}"
        )
    if candidate.min_gap() <= 1e-300:
        raise StructureViolation("node ordering collapsed")
    if spec.pinned and (x_new[0] != grid.X[0] or x_new[-1] != grid.X[-1]):
        raise StructureViolation("pinned end nodes moved")

    merge_count = 0
    final = candidate
    if candidate.min_gap() <= config.merge_tol:
        final, merge_count = _density.merge_particles(candidate, config.merge_tol)
    sample = _density.density_from_trajectory(final)
    chain_energy = e_new if merge_count == 0 else _diag.discrete_energy(final, spec)
    interior = sample.density[1:-1] if not spec.pinned else sample.density
    record = StepRecord(
        t=final.t,
        tau=tau_step,
        e_old=e_old.E,
        e_new=e_new.E,
        e_c=e_new.E_c,
        e_e=e_new.E_e,
        dissipation_bound=bound,
        newton_iterations=iters,
        merge_count=merge_count,
        total_mass=float(np.sum(sample.masses)),
        min_gap=final.min_gap(),
        min_density=float(np.min(interior)),
        energy_chain=chain_energy,
    )
    return final, record


def advance(state: TrajectoryState, spec, grid=None, config: SolverConfig = None):
    """One accepted step (with the single tau/2 retry and gap merging)."""
    if config is None:
        raise ValueError("advance requires a SolverConfig")
    new_state, _ = _advance_full(state, spec, config)
    return new_state


@dataclass
class SimulationTrace:
    """Per-step scalar series plus snapshots of a run."""

    times: np.ndarray
    energy: np.ndarray  # E at the end of each step, prepended with E(0)
    energy_convex: np.ndarray
    energy_concave: np.ndarray
    energy_old: np.ndarray
    dissipation_bound: np.ndarray
    step_tau: np.ndarray
    total_mass: np.ndarray
    min_gap: np.ndarray
    min_density: np.ndarray
    newton_iterations: np.ndarray
    merges: list
    snapshots: list
    final_state: TrajectoryState
    steady_reached: bool
    initial_energy: float
    initial_report: object


def run_simulation(
    spec,
    grid,
    config: SolverConfig,
    T: float,
    observers: Sequence[Callable] = (),
    snapshot_every: int = 0,
    steady_window: Optional[int] = None,
    steady_tol: float = 1e-12,
) -> SimulationTrace:
    """March the step map to time T (or steady state) and collect series.

    Observers are called as observer(step_index, state, record) after
    every accepted step.  Snapshots keep full states every
    ``snapshot_every`` steps (0 keeps only the initial and final ones).
    """
    from . import diagnostics as _diag

    if T < 0.0:
        raise ValueError("final time must be nonnegative")
    state = TrajectoryState.initial(spec, grid)
    energy = _diag.discrete_energy(state, spec)
    initial_report = energy
    e0 = energy.E
    snapshots = [(0.0, state)]
    records = []
    merges = []
    e_series = [e0]
    steady = False
    eps = 1e-12 * max(1.0, T)
    while state.t < T - eps and len(records) < config.max_steps:
        tau_step = min(config.tau, T - state.t)
        try:
            state, rec = _advance_full(
                state, spec, config, energy_old=energy, tau=tau_step
            )
        except (NewtonFailure, StructureViolation) as exc:
            raise StepFailure(len(records), str(exc)) from exc
        energy = rec.energy_chain
        records.append(rec)
        e_series.append(rec.energy_chain.E)
        if rec.merge_count:
            merges.append((state.step, state.t, rec.merge_count, state.x.size))
        for obs in observers:
            obs(state.step, state, rec)
        if snapshot_every and state.step % snapshot_every == 0:
            snapshots.append((state.t, state))
        if steady_window and _diag.detect_steady(e_series, steady_window, steady_tol):
            steady = True
            break
    if not snapshots or snapshots[-1][1] is not state:
        snapshots.append((state.t, state))
    return SimulationTrace(
        times=np.array([r.t for r in records]),
        energy=np.array([r.e_new for r in records]),
        energy_convex=np.array([r.e_c for r in records]),
        energy_concave=np.array([r.e_e for r in records]),
        energy_old=np.array([r.e_old for r in records]),
        dissipation_bound=np.array([r.dissipation_bound for r in records]),
        step_tau=np.array([r.tau for r in records]),
        total_mass=np.array([r.total_mass for r in records]),
        min_gap=np.array([r.min_gap for r in records]),
        min_density=np.array([r.min_density for r in records]),
        newton_iterations=np.array([r.newton_iterations for r in records], dtype=int),
        merges=merges,
        snapshots=snapshots,
        final_state=state,
        steady_reached=steady,
        initial_energy=e0,
        initial_report=initial_report,
    )
