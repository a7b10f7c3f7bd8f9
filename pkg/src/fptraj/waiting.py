"""Waiting-time estimation for stationary free boundaries.

A free boundary can stay put for a finite time before moving.  The
boundary driving term B (the negated interface velocity of the
discrete boundary law) is tracked on two grids with spacings h and 2h;
while the interface waits, B is dominated by its mesh-dependent part,
so the coarse value exceeds the fine one.  The first recorded time with
|B_2h / B_h| <= 1 is taken as the waiting time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .problems import ProblemSpec
from .stepper import (
    SolverConfig,
    TrajectoryState,
    _advance_full,
    kernel_concave_force,
    kernel_convex_force,
)

__all__ = ["WaitingTimeRecord", "boundary_driving_term", "estimate_waiting_time"]

_SIDES = ("left", "right")


@dataclass(frozen=True)
class WaitingTimeRecord:
    """Estimated waiting time of one boundary plus the per-step history
    of (t, B_h, B_2h, ratio) tuples; t_star is +inf if the two-grid
    criterion never fired before the final time."""

    t_star: float
    history: tuple
    side: str


def boundary_driving_term(
    state: TrajectoryState, spec: ProblemSpec, grid=None, side: str = "left"
) -> float:
    """Driving term of the free-boundary law at the chosen endpoint.

    All quantities are taken at the current level.  The interface
    velocity is the negative of this value: at the left endpoint, a
    negative driving term pushes the node inward (boundary held), a
    positive one moves it outward.
    """
    if spec.pinned:
        raise ValueError("boundary driving term is defined for free boundaries only")
    if side not in _SIDES:
        raise ValueError(f"side must be one of {_SIDES}")
    grid = grid or state.grid
    x = state.x
    u0n = state.u0_nodes
    dX = grid.cell_widths
    masses = grid.node_weights * u0n
    b = 0 if side == "left" else x.size - 1
    if side == "left":
        q = (x[1] - x[0]) / dX[0]
        du0 = (u0n[1] - u0n[0]) / dX[0]
    else:
        q = (x[-1] - x[-2]) / dX[-1]
        du0 = (u0n[-1] - u0n[-2]) / dX[-1]
    hdd = float(spec.energy.H_double_prime(u0n[b] / q))
    f0 = spec.mobility.f_prime_zero
    # single-target kernel sums; the self term of a kinked kernel is the
    # symmetric mean of the one-sided derivatives
    if spec.kernel.is_zero:
        s_c = s_e = 0.0
    else:
        s_c = float(kernel_convex_force(spec.kernel, x, masses)[0][b])
        s_e = float(kernel_concave_force(spec.kernel, x, masses)[b])
    vc = float(spec.potential.V_c_prime(x[b]))
    ve = float(spec.potential.V_e_prime(x[b]))
    return f0 * (hdd * du0 / q**2 + vc - ve + s_c - s_e)


def estimate_waiting_time(
    spec: ProblemSpec,
    config: SolverConfig,
    M: int,
    T: float,
    sides=("left", "right"),
) -> dict[str, WaitingTimeRecord]:
    """Two-grid waiting-time estimate for each requested boundary.

    Runs synchronized simulations with M and M/2 cells at the same time
    step.  The history starts after the first step: the raw initial
    data only measures the one-sided sampling of u0, not motion, and the
    boundary node needs one step to settle onto its quasi-static
    position.  Steps where B_h vanishes exactly are recorded with a NaN
    ratio and cannot fire the criterion.
    """
    if spec.pinned:
        raise ValueError("waiting time is defined for free-boundary problems")
    if M % 2 != 0:
        raise ValueError("M must be even so the coarse grid nests")
    for side in sides:
        if side not in _SIDES:
            raise ValueError(f"side must be one of {_SIDES}")

    fine = TrajectoryState.initial(spec, spec.make_grid(M))
    coarse = TrajectoryState.initial(spec, spec.make_grid(M // 2))
    history = {side: [] for side in sides}
    t_star = {side: math.inf for side in sides}

    n_steps = int(round(T / config.tau))
    for _ in range(n_steps):
        fine, _ = _advance_full(fine, spec, config)
        coarse, _ = _advance_full(coarse, spec, config)
        for side in sides:
            b_h = boundary_driving_term(fine, spec, side=side)
            b_2h = boundary_driving_term(coarse, spec, side=side)
            ratio = b_2h / b_h if b_h != 0.0 else math.nan
            history[side].append((fine.t, b_h, b_2h, ratio))
            if math.isfinite(ratio) and abs(ratio) <= 1.0 and t_star[side] == math.inf:
                t_star[side] = fine.t
        if all(t_star[side] < math.inf for side in sides):
            break

    return {
        side: WaitingTimeRecord(
            t_star=t_star[side], history=tuple(history[side]), side=side
        )
        for side in sides
    }
