"""Density reconstruction, per-particle masses, and particle merging.

The density at a node is the carried initial density divided by the
centered discrete Jacobian of the flow map, which makes every particle's
mass a constant of the motion.  When trajectories collapse onto each
other (blow-up), runs of nearly coincident particles are merged into
single mass-carrying particles so the evolution can continue.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import LagrangianGrid
from .stepper import LeftAdmissibleSet, TrajectoryState

__all__ = [
    "DensitySample",
    "density_from_trajectory",
    "particle_masses",
    "merge_particles",
]


@dataclass(frozen=True)
class DensitySample:
    """Positions, reconstructed densities, and particle masses at one time."""

    positions: np.ndarray
    density: np.ndarray
    masses: np.ndarray
    t: float


def _reconstruct(state: TrajectoryState):
    x = state.x
    X = state.grid.X
    if np.any(np.diff(x) <= 0.0):
        raise LeftAdmissibleSet("positions must be strictly increasing")
    jac = np.empty_like(x)
    jac[1:-1] = (x[2:] - x[:-2]) / (X[2:] - X[:-2])
    jac[0] = (x[1] - x[0]) / (X[1] - X[0])
    jac[-1] = (x[-1] - x[-2]) / (X[-1] - X[-2])
    u = state.u0_nodes / jac
    m = np.empty_like(x)
    m[1:-1] = 0.5 * (x[2:] - x[:-2]) * u[1:-1]
    m[0] = 0.5 * (x[1] - x[0]) * u[0]
    m[-1] = 0.5 * (x[-1] - x[-2]) * u[-1]
    return u, m


def density_from_trajectory(state: TrajectoryState) -> DensitySample:
    """Reconstruct node densities from the current particle positions."""
    u, m = _reconstruct(state)
    return DensitySample(positions=state.x.copy(), density=u, masses=m, t=state.t)


def particle_masses(state: TrajectoryState) -> np.ndarray:
    """Mass carried by each particle; constant in time by construction."""
    _, m = _reconstruct(state)
    return m


def merge_particles(state: TrajectoryState, eps0: float):
    """Collapse runs of particles whose gaps are at most ``eps0``.

    Each maximal run becomes one particle at the mass-weighted mean
    position carrying the summed mass (pinned end particles keep their
    position).  Returns the merged state and the number of particles
    removed; a state with no small gaps is returned unchanged.
    """
    if eps0 <= 0.0:
        raise ValueError("merge tolerance must be positive")
    x = state.x
    gaps = np.diff(x)
    below = gaps <= eps0
    if not np.any(below):
        return state, 0

    X = state.grid.X
    masses = state.grid.node_weights * state.u0_nodes
    n = x.size
    new_x, new_X, new_m = [], [], []
    i = 0
    while i < n:
        j = i
        while j < n - 1 and below[j]:
            j += 1
        if j == i:
            new_x.append(x[i])
            new_X.append(X[i])
            new_m.append(masses[i])
        else:
            block = slice(i, j + 1)
            mb = masses[block]
            mtot = float(np.sum(mb))
            if mtot <= 0.0:  # massless run: plain averages
                pos = float(np.mean(x[block]))
                lab = float(np.mean(X[block]))
            else:
                pos = float(np.sum(mb * x[block]) / mtot)
                lab = float(np.sum(mb * X[block]) / mtot)
            if i == 0:  # keep the end particles where they are
                pos, lab = float(x[0]), float(X[0])
            elif j == n - 1:
                pos, lab = float(x[-1]), float(X[-1])
            new_x.append(pos)
            new_X.append(lab)
            new_m.append(mtot)
        i = j + 1

    removed = n - len(new_x)
    if len(new_x) < 3:
        raise ValueError("merging would leave fewer than 3 particles")
    grid = LagrangianGrid(np.array(new_X))
    m_arr = np.array(new_m)
    u0_nodes = m_arr / grid.node_weights
    # carried-density samples at the surviving label midpoints
    u0_cells = np.interp(grid.midpoints, X, state.u0_nodes)
    merged = TrajectoryState(
        x=np.array(new_x),
        t=state.t,
        step=state.step,
        u0_nodes=u0_nodes,
        grid=grid,
        u0_cells=u0_cells,
    )
    return merged, removed
