"""Discrete energy, dissipation bound, steady-state residual, stopping rule.

The discrete total energy mirrors the continuous one: a midpoint-rule
internal-energy term over cells plus trapezoid-rule potential and kernel
terms over nodes.  Its convex/concave split tracks the splitting the
stepper uses, and the dissipation bound is the mobility-weighted
quadratic form of the step velocity that bounds the energy decrement
from below in magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .grid import centered_diff
from .problems import ProblemSpec
from .stepper import TrajectoryState, kernel_energy_fields, kernel_convex_force, kernel_concave_force

__all__ = [
    "EnergyReport",
    "discrete_energy",
    "dissipation_bound",
    "steady_residual",
    "relative_energy",
    "detect_steady",
]


@dataclass(frozen=True)
class EnergyReport:
    """Total discrete energy, its convex/concave parts, and (once a step
    has been taken) the nonpositive dissipation bound for that step."""

    E: float
    E_c: float
    E_e: float
    dissipation_bound: Optional[float]
    t: float


def discrete_energy(state: TrajectoryState, spec: ProblemSpec, grid=None) -> EnergyReport:
    """Evaluate the discrete total energy and its split at one state."""
    grid = grid or state.grid
    x = state.x
    q = np.diff(x) / grid.cell_widths
    if np.any(q <= 0.0):
        raise ValueError("state is outside the admissible set")
    masses = grid.node_weights * state.u0_nodes
    hterm = float(np.sum(grid.cell_widths * np.asarray(spec.energy.H(state.u0_cells / q)) * q))
    vc = float(np.sum(masses * np.asarray(spec.potential.V_c(x))))
    ve = float(np.sum(masses * np.asarray(spec.potential.V_e(x))))
    wc_field, we_field = kernel_energy_fields(spec.kernel, x, masses)
    wc = 0.5 * float(np.sum(masses * wc_field))
    we = 0.5 * float(np.sum(masses * we_field))
    e_c = hterm + vc + wc
    e_e = ve + we
    # total assembled from the unsplit fields; agrees with E_c - E_e
    total = hterm + float(np.sum(masses * (np.asarray(spec.potential.V_c(x)) - np.asarray(spec.potential.V_e(x))))) + 0.5 * float(np.sum(masses * (wc_field - we_field)))
    return EnergyReport(E=total, E_c=e_c, E_e=e_e, dissipation_bound=None, t=state.t)


def dissipation_bound(x_new, x_old, spec, grid, tau, u0_nodes=None) -> float:
    """-<drag * rate, rate> with the drag frozen at the old state; <= 0."""
    x_new = np.asarray(x_new, dtype=float)
    x_old = np.asarray(x_old, dtype=float)
    for v in (x_new, x_old):
        if np.any(np.diff(v) <= 0.0):
            raise ValueError("states must be strictly increasing")
    if u0_nodes is None:
        from .stepper import problem_fields

        u0_nodes, _ = problem_fields(spec, grid)
    jac_old = centered_diff(x_old, grid.cell_widths)
    drag = spec.mobility.drag_weight(u0_nodes, jac_old)
    rate = (x_new - x_old) / tau
    return -float(np.sum(grid.node_weights * drag * rate * rate))


def steady_residual(state: TrajectoryState, spec: ProblemSpec, grid=None):
    """Defect of the discrete steady-state equations with unsplit forces.

    Interior rows difference the flux potential and add the full V' and
    kernel force; pinned boundary rows are zero, free rows report the
    interface driving term.  Returns (field, max_norm).
    """
    grid = grid or state.grid
    x = state.x
    q = np.diff(x) / grid.cell_widths
    if np.any(q <= 0.0):
        raise ValueError("state is outside the admissible set")
    masses = grid.node_weights * state.u0_nodes
    u0n = state.u0_nodes
    flux = spec.energy.flux_potential(state.u0_cells / q)
    s_c, _ = kernel_convex_force(spec.kernel, x, masses)
    s_e = kernel_concave_force(spec.kernel, x, masses)
    s_full = s_c - s_e
    vp = np.asarray(spec.potential.V_prime(x), dtype=float)
    res = np.empty_like(x)
    res[1:-1] = (
        -np.diff(flux) / grid.node_weights[1:-1]
        - u0n[1:-1] * vp[1:-1]
        - u0n[1:-1] * s_full[1:-1]
    )
    if spec.pinned:
        res[0] = 0.0
        res[-1] = 0.0
    else:
        hdd = spec.energy.H_double_prime
        f0 = spec.mobility.f_prime_zero
        dX = grid.cell_widths
        du0_l = (u0n[1] - u0n[0]) / dX[0]
        du0_r = (u0n[-1] - u0n[-2]) / dX[-1]
        res[0] = f0 * (
            float(hdd(u0n[0] / q[0])) * du0_l / q[0] ** 2 + vp[0] + s_full[0]
        )
        res[-1] = f0 * (
            float(hdd(u0n[-1] / q[-1])) * du0_r / q[-1] ** 2 + vp[-1] + s_full[-1]
        )
    return res, float(np.max(np.abs(res)))


def relative_energy(state, steady_state, spec, grid=None) -> float:
    """Energy excess over a steady state; nonnegative at a minimizer."""
    e = discrete_energy(state, spec, grid).E
    e_inf = discrete_energy(steady_state, spec, grid).E
    rel = e - e_inf
    if rel < -1e-10 * (1.0 + abs(e_inf)):
        raise ValueError(
            f"state lies below the supposed steady-state minimizer: {rel!r}"
        )
    return rel


def detect_steady(energy_history: Sequence[float], window: int, tol: float) -> bool:
    """True when the energy moved by at most tol (relative) over ``window``
    most recent steps."""
    if window < 2:
        raise ValueError("window must be at least 2")
    if len(energy_history) <= window:
        return False
    e_now = energy_history[-1]
    e_then = energy_history[-1 - window]
    return abs(e_now - e_then) <= tol * (1.0 + abs(e_now))
