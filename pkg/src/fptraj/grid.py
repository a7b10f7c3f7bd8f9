"""Reference grid, difference operators, inner products, and error norms.

Node fields live on the M+1 grid nodes, cell fields on the M cell
midpoints.  All operators accept either a scalar spacing (uniform grid)
or per-interval spacing arrays, which is what keeps the solver usable
after particle merging has left a nonuniform set of reference labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _check_spacing(h) -> None:
    if np.any(np.asarray(h) <= 0.0):
        raise ValueError("grid spacing must be positive")


@dataclass(frozen=True)
class LagrangianGrid:
    """Strictly increasing reference node coordinates X_0 < ... < X_M.

    Freshly built grids are uniform with spacing ``h``; merging collapses
    labels and leaves a nonuniform grid, so derived quadrature data is
    stored per interval.
    """

    X: np.ndarray

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=float)
        if X.ndim != 1 or X.size < 2:
            raise ValueError("grid needs at least two nodes")
        dX = np.diff(X)
        if np.any(dX <= 0.0):
            raise ValueError("grid nodes must be strictly increasing")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "_dX", dX)
        # trapezoid weights: half-cells at the ends
        w = np.empty(X.size)
        w[0] = 0.5 * dX[0]
        w[-1] = 0.5 * dX[-1]
        w[1:-1] = 0.5 * (dX[:-1] + dX[1:])
        object.__setattr__(self, "_weights", w)
        uniform = bool(np.allclose(dX, dX[0], rtol=1e-12, atol=0.0))
        object.__setattr__(self, "_uniform", uniform)

    @classmethod
    def uniform(cls, a: float, b: float, M: int) -> "LagrangianGrid":
        if M < 1:
            raise ValueError("need at least one cell")
        if not b > a:
            raise ValueError("empty interval")
        return cls(np.linspace(a, b, M + 1))

    @property
    def M(self) -> int:
        return self.X.size - 1

    @property
    def is_uniform(self) -> bool:
        return self._uniform

    @property
    def h(self) -> float:
        """Uniform spacing; raises on merged (nonuniform) grids."""
        if not self._uniform:
            raise ValueError("grid is nonuniform; use cell_widths")
        return float(self._dX[0])

    @property
    def cell_widths(self) -> np.ndarray:
        return self._dX

    @property
    def node_weights(self) -> np.ndarray:
        """Trapezoid quadrature weights of the node inner product."""
        return self._weights

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.X[:-1] + self.X[1:])


def forward_diff(l, h):
    """Forward difference of a node field onto the M cell midpoints."""
    l = np.asarray(l, dtype=float)
    if l.size < 2:
        raise ValueError("need at least two node values")
    _check_spacing(h)
    return np.diff(l) / h


def cell_div(phi, h):
    """Difference of a cell field onto the interior nodes 1..M-1.

    Boundary rows are deliberately not produced; the caller owns the
    boundary conditions and must supply its own rows there.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.size < 2:
        raise ValueError("need at least two cell values")
    _check_spacing(h)
    return np.diff(phi) / h


def centered_diff(l, h):
    """Centered difference at interior nodes, one-sided at the ends.

    ``h`` is either the uniform spacing or the array of M cell widths.
    """
    l = np.asarray(l, dtype=float)
    if l.size < 2:
        raise ValueError("need at least two node values")
    _check_spacing(h)
    out = np.empty_like(l)
    if np.ndim(h) == 0:
        out[1:-1] = (l[2:] - l[:-2]) / (2.0 * float(h))
        out[0] = (l[1] - l[0]) / h
        out[-1] = (l[-1] - l[-2]) / h
    else:
        w = np.asarray(h, dtype=float)
        if w.size != l.size - 1:
            raise ValueError("need one spacing per cell")
        out[1:-1] = (l[2:] - l[:-2]) / (w[:-1] + w[1:])
        out[0] = (l[1] - l[0]) / w[0]
        out[-1] = (l[-1] - l[-2]) / w[-1]
    return out


def inner_node(l, g, h):
    """Trapezoid-weighted inner product of two node fields.

    Scalar ``h`` gives the uniform rule h*(l0*g0/2 + sum + lM*gM/2); an
    array is interpreted as explicit per-node quadrature weights.
    """
    l = np.asarray(l, dtype=float)
    g = np.asarray(g, dtype=float)
    if l.shape != g.shape:
        raise ValueError("node fields must have equal length")
    if np.ndim(h) == 0:
        _check_spacing(h)
        core = l * g
        return float(h) * (0.5 * core[0] + core[1:-1].sum() + 0.5 * core[-1])
    w = np.asarray(h, dtype=float)
    if w.shape != l.shape:
        raise ValueError("need one weight per node")
    return float(np.sum(w * l * g))


def inner_cell(phi, psi, h):
    """Inner product of two cell fields (midpoint rule)."""
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if phi.shape != psi.shape:
        raise ValueError("cell fields must have equal length")
    if np.ndim(h) == 0:
        _check_spacing(h)
        return float(h) * float(np.sum(phi * psi))
    w = np.asarray(h, dtype=float)
    if w.shape != phi.shape:
        raise ValueError("need one width per cell")
    return float(np.sum(w * phi * psi))


def moving_mesh_weights(x) -> np.ndarray:
    """Local mesh widths attached to particle positions.

    Interior nodes get (x_{i+1}-x_{i-1})/2; the end nodes get the full
    one-sided gap.  These are the weights of the density error norms.
    """
    x = np.asarray(x, dtype=float)
    w = np.empty_like(x)
    w[1:-1] = 0.5 * (x[2:] - x[:-2])
    w[0] = x[1] - x[0]
    w[-1] = x[-1] - x[-2]
    return w


def error_norms(e, weights):
    """(L2, L1, Linf) of an error field with per-node mesh widths.

    The end nodes enter the integral norms with half weight; the sup
    norm runs over every node.
    """
    e = np.asarray(e, dtype=float)
    w = np.asarray(weights, dtype=float)
    if e.shape != w.shape:
        raise ValueError("error field and weights must have equal length")
    if np.any(w < 0.0):
        raise ValueError("weights must be nonnegative")
    tw = w.copy()
    tw[0] *= 0.5
    tw[-1] *= 0.5
    l2 = float(np.sqrt(np.sum(tw * e * e)))
    l1 = float(np.sum(tw * np.abs(e)))
    linf = float(np.max(np.abs(e))) if e.size else 0.0
    return l2, l1, linf
