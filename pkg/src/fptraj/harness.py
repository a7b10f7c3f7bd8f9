"""Experiment harness: runs, convergence studies, waiting-time sweeps, CSVs.

Everything the command line does is implemented here as plain functions
so tests can drive the experiments directly.  CSV files are written
with 17 significant digits, LF endings, and a header row; identical
configurations produce bit-identical files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .density import density_from_trajectory
from .diagnostics import steady_residual
from .grid import error_norms, moving_mesh_weights
from .problems import ProblemSpec, build_example
from .stepper import SimulationTrace, SolverConfig, run_simulation
from .waiting import estimate_waiting_time

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ConvergenceRow",
    "build_spec",
    "run_experiment",
    "convergence_study",
    "waiting_sweep",
    "steady_experiment",
    "exact_steady_density",
    "exact_steady_trajectory_ex1",
]


class ConfigError(ValueError):
    """Invalid experiment configuration (maps to exit code 2)."""


@dataclass(frozen=True)
class ExperimentConfig:
    example: str
    params: dict = field(default_factory=dict)
    M: int = 100
    tau: float = 1e-2
    T: float = 1.0
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    merge_tol: float = 1e-9
    out: Optional[Path] = None
    snapshot_every: int = 0
    levels: int = 3
    reference: str = "exact"
    seed: Optional[int] = None

    def __post_init__(self):
        if self.M < 2:
            raise ConfigError("M must be at least 2")
        if self.tau <= 0.0:
            raise ConfigError("tau must be positive")
        if self.T < 0.0:
            raise ConfigError("T must be nonnegative")
        if self.reference not in ("exact", "refined"):
            raise ConfigError("reference must be 'exact' or 'refined'")
        if self.levels < 2:
            raise ConfigError("need at least 2 refinement levels")

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            tau=self.tau,
            newton_tol=self.newton_tol,
            newton_max_iter=self.newton_max_iter,
            merge_tol=self.merge_tol,
        )


def _randomized_initial(spec: ProblemSpec, seed: int) -> ProblemSpec:
    """Seeded smooth random perturbation of the initial density.

    Keeps the sign pattern (zero at free edges, positive inside) so the
    perturbed problem is still admissible.
    """
    rng = np.random.default_rng(seed)
    amps = rng.uniform(-1.0, 1.0, 4)
    a, b = spec.support
    base = spec.u0

    def u0(x):
        x = np.asarray(x, dtype=float)
        s = (x - a) / (b - a)
        noise = np.zeros_like(s)
        for k, amp in enumerate(amps, start=1):
            noise += amp * np.sin(math.pi * k * s) / k
        return base(x) * (1.0 + 0.4 * noise)

    return replace(spec, u0=u0)


def build_spec(cfg: ExperimentConfig) -> ProblemSpec:
    try:
        spec = build_example(cfg.example, cfg.params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.seed is not None:
        spec = _randomized_initial(spec, cfg.seed)
    return spec


# ---------------------------------------------------------------------------
# CSV helpers


def _fmt(v) -> str:
    return f"{float(v):.17g}"


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_energy_csv(out: Path, trace: SimulationTrace) -> None:
    rows = [(0, 0.0, trace.initial_report.E, trace.initial_report.E_c,
             trace.initial_report.E_e, math.nan)]
    for i in range(trace.times.size):
        rows.append(
            (
                i + 1,
                trace.times[i],
                trace.energy[i],
                trace.energy_convex[i],
                trace.energy_concave[i],
                trace.dissipation_bound[i],
            )
        )
    write_csv(out / "energy.csv", ["step", "t", "E", "E_c", "E_e", "dissipation_bound"], rows)


def _write_state_csvs(out: Path, tag: str, state) -> None:
    sample = density_from_trajectory(state)
    write_csv(
        out / f"trajectory_{tag}.csv",
        ["i", "X", "x"],
        ((i, state.grid.X[i], state.x[i]) for i in range(state.x.size)),
    )
    write_csv(
        out / f"density_{tag}.csv",
        ["x", "u", "mass"],
        zip(sample.positions, sample.density, sample.masses),
    )


def run_experiment(cfg: ExperimentConfig):
    """One simulation with the full set of output files."""
    spec = build_spec(cfg)
    grid = spec.make_grid(cfg.M)
    trace = run_simulation(
        spec, grid, cfg.solver_config(), cfg.T, snapshot_every=cfg.snapshot_every
    )
    if cfg.out is not None:
        out = Path(cfg.out)
        _write_energy_csv(out, trace)
        if cfg.snapshot_every:
            for t, state in trace.snapshots:
                _write_state_csvs(out, f"{state.step:06d}", state)
        _write_state_csvs(out, "final", trace.final_state)
        write_csv(
            out / "merges.csv",
            ["step", "t", "count", "retained_nodes"],
            trace.merges,
        )
    return trace


# ---------------------------------------------------------------------------
# exact references


def exact_steady_density(example: str, params: Optional[dict] = None):
    """Closed-form steady density for the examples that have one."""
    params = dict(params or {})
    if example == "ex1":
        m = float(params.get("m", 2.0))
        if m != 2.0:
            raise ConfigError("exact steady profile is tabulated for m = 2 only")
        peak = (3.0 / 8.0) ** (2.0 / 3.0)

        def u_inf(x):
            x = np.asarray(x, dtype=float)
            return np.maximum(peak - 0.25 * x * x, 0.0)

        return u_inf
    if example == "ex2":
        m = float(params.get("m", 2.0))
        nu = float(params.get("nu", 1.0))
        if m != 2.0:
            raise ConfigError("exact steady profile is tabulated for m = 2 only")
        c = -3.0 / 16.0

        def u_inf(x):
            x = np.asarray(x, dtype=float)
            v = 0.25 * x**4 - 0.5 * x**2
            return np.maximum((c - v) / nu, 0.0)

        return u_inf
    raise ConfigError(f"no exact steady density registered for {example}")


def exact_steady_trajectory_ex1(X) -> np.ndarray:
    """Monotone-rearrangement steady flow map for the one-well problem.

    Matches cumulative masses of the triangular initial density and the
    steady profile; solved per node by bracketed root finding.
    """
    X = np.asarray(X, dtype=float)
    peak = (3.0 / 8.0) ** (2.0 / 3.0)
    r = 3.0 ** (1.0 / 3.0)

    def f0(s):  # cumulative mass of max(1-|x|, 0) from -1
        if s <= 0.0:
            return 0.5 * (1.0 + s) ** 2
        return 0.5 + s - 0.5 * s * s

    def f_inf(x):  # cumulative mass of the steady profile from -r
        return peak * (x + r) - (x**3 + r**3) / 12.0

    out = np.empty_like(X)
    for i, Xi in enumerate(X):
        target = f0(float(Xi))
        if target <= 0.0:
            out[i] = -r
        elif target >= 1.0:
            out[i] = r
        else:
            out[i] = brentq(lambda x: f_inf(x) - target, -r, r, xtol=1e-14)
    return out


# ---------------------------------------------------------------------------
# convergence studies


@dataclass(frozen=True)
class ConvergenceRow:
    h: float
    tau: float
    u_L1: float
    u_L2: float
    u_Linf: float
    x_L2: float
    x_Linf: float
    order_u_L1: float
    order_u_L2: float
    order_u_Linf: float


def _level_errors(state, u_ref_at_nodes, x_ref_at_nodes, h):
    sample = density_from_trajectory(state)
    w_u = moving_mesh_weights(sample.positions)
    u_l2, u_l1, u_linf = error_norms(u_ref_at_nodes - sample.density, w_u)
    if x_ref_at_nodes is None:
        x_l2 = x_linf = math.nan
    else:
        w_x = np.full_like(state.x, h)
        x_l2, _, x_linf = error_norms(x_ref_at_nodes - state.x, w_x)
    return u_l1, u_l2, u_linf, x_l2, x_linf


def convergence_study(cfg: ExperimentConfig):
    """Refine (h, tau) -> (h/2, tau/4) ``levels`` times and tabulate errors.

    The coarsest level uses (cfg.M, cfg.tau).  Errors are measured either
    against a closed-form steady solution or against a nested refined
    run (8x the finest grid, tau scaled by the same h^2 law), compared at
    shared reference labels.
    """
    spec = build_spec(cfg)
    extent = spec.support[1] - spec.support[0]
    levels = []
    for k in range(cfg.levels):
        M_k = cfg.M * 2**k
        tau_k = cfg.tau / 4.0**k
        grid = spec.make_grid(M_k)
        solver = SolverConfig(
            tau=tau_k,
            newton_tol=cfg.newton_tol,
            newton_max_iter=cfg.newton_max_iter,
            merge_tol=cfg.merge_tol,
        )
        trace = run_simulation(spec, grid, solver, cfg.T)
        levels.append((M_k, tau_k, trace.final_state))

    if cfg.reference == "exact":
        u_inf = exact_steady_density(cfg.example, cfg.params)
        x_map = exact_steady_trajectory_ex1 if cfg.example == "ex1" else None
        refs = []
        for M_k, tau_k, state in levels:
            u_ref = u_inf(state.x)
            x_ref = x_map(state.grid.X) if x_map is not None else None
            refs.append((u_ref, x_ref))
    else:
        M_fine = levels[-1][0]
        M_ref = 8 * M_fine
        tau_ref = levels[-1][1] / 64.0
        grid_ref = spec.make_grid(M_ref)
        solver = SolverConfig(
            tau=tau_ref,
            newton_tol=cfg.newton_tol,
            newton_max_iter=cfg.newton_max_iter,
            merge_tol=cfg.merge_tol,
        )
        ref_trace = run_simulation(spec, grid_ref, solver, cfg.T)
        ref_state = ref_trace.final_state
        ref_sample = density_from_trajectory(ref_state)
        refs = []
        for M_k, tau_k, state in levels:
            stride = M_ref // M_k
            refs.append(
                (ref_sample.density[::stride], ref_state.x[::stride])
            )

    rows = []
    prev = None
    for (M_k, tau_k, state), (u_ref, x_ref) in zip(levels, refs):
        h_k = extent / M_k
        u_l1, u_l2, u_linf, x_l2, x_linf = _level_errors(state, u_ref, x_ref, h_k)
        if prev is None:
            orders = (math.nan, math.nan, math.nan)
        else:
            orders = (
                math.log2(prev[0] / u_l1),
                math.log2(prev[1] / u_l2),
                math.log2(prev[2] / u_linf),
            )
        rows.append(
            ConvergenceRow(
                h=h_k, tau=tau_k,
                u_L1=u_l1, u_L2=u_l2, u_Linf=u_linf,
                x_L2=x_l2, x_Linf=x_linf,
                order_u_L1=orders[0], order_u_L2=orders[1], order_u_Linf=orders[2],
            )
        )
        prev = (u_l1, u_l2, u_linf)

    if cfg.out is not None:
        write_csv(
            Path(cfg.out) / "errors.csv",
            ["h", "tau", "u_L1", "u_L2", "u_Linf", "x_L2", "x_Linf",
             "order_u_L1", "order_u_L2", "order_u_Linf"],
            (
                (r.h, r.tau, r.u_L1, r.u_L2, r.u_Linf, r.x_L2, r.x_Linf,
                 r.order_u_L1, r.order_u_L2, r.order_u_Linf)
                for r in rows
            ),
        )
    return rows


# ---------------------------------------------------------------------------
# waiting-time sweep and steady runs


def waiting_sweep(cfg: ExperimentConfig, thetas: Sequence[float]):
    """Waiting time for each interaction strength; one CSV row per value."""
    rows = []
    for theta in thetas:
        params = dict(cfg.params)
        params["theta"] = theta
        spec = build_spec(replace(cfg, params=params))
        if spec.pinned:
            raise ConfigError("waiting time needs a free-boundary example")
        records = estimate_waiting_time(spec, cfg.solver_config(), cfg.M, cfg.T)
        rows.append((theta, records["left"].t_star, records["right"].t_star))
    if cfg.out is not None:
        write_csv(
            Path(cfg.out) / "waiting.csv",
            ["theta", "t_star_left", "t_star_right"],
            rows,
        )
    return rows


def steady_experiment(cfg: ExperimentConfig, window: int = 100, tol: float = 1e-12):
    """March until the energy plateaus (or T), then report the defect."""
    spec = build_spec(cfg)
    grid = spec.make_grid(cfg.M)
    trace = run_simulation(
        spec, grid, cfg.solver_config(), cfg.T,
        snapshot_every=cfg.snapshot_every, steady_window=window, steady_tol=tol,
    )
    _, defect = steady_residual(trace.final_state, spec)
    if cfg.out is not None:
        out = Path(cfg.out)
        _write_energy_csv(out, trace)
        _write_state_csvs(out, "final", trace.final_state)
        write_csv(out / "merges.csv", ["step", "t", "count", "retained_nodes"], trace.merges)
    return trace, defect
