"""Continuous problem data: mobility, internal energy, split potentials/kernels.

A :class:`ProblemSpec` bundles everything the solver needs about the
continuous equation

    u_t = ( f(u) [H'(u) + V(x) + (W*u)(x)]_x )_x

together with the convex/concave splits V = V_c - V_e and
W = W_c - W_e that the implicit-explicit step relies on.  The five
benchmark problems are exposed through :func:`build_example`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .interactions import QuadraticGaussianSums

__all__ = [
    "Mobility",
    "InternalEnergy",
    "SplitPotential",
    "SplitKernel",
    "ProblemSpec",
    "ValidationCheck",
    "ValidationReport",
    "build_example",
    "validate_spec",
    "EXAMPLE_IDS",
]

ScalarFn = Callable[[np.ndarray], np.ndarray]

EXAMPLE_IDS = ("ex1", "ex2", "ex3", "ex4", "ex5")


def _zero(x):
    return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class Mobility:
    """Density-dependent mobility f with f(0) = 0 and f'(0) != 0."""

    f: ScalarFn
    f_prime_zero: float

    def __post_init__(self):
        if self.f_prime_zero == 0.0:
            raise ValueError("f'(0) must be nonzero")

    def drag_weight(self, u0, jac):
        """Vacuum-safe u0^2 / (jac * f(u0/jac)).

        Equals u0 * s/f(s) at s = u0/jac; the s -> 0 limit u0/f'(0) is
        used where u0 vanishes, so free-boundary nodes carry zero drag.
        """
        u0 = np.asarray(u0, dtype=float)
        jac = np.asarray(jac, dtype=float)
        s = u0 / jac
        ratio = np.full_like(s, 1.0 / self.f_prime_zero)
        pos = s > 0.0
        if np.any(pos):
            ratio[pos] = s[pos] / self.f(s[pos])
        return u0 * ratio


@dataclass(frozen=True)
class InternalEnergy:
    """Internal-energy density H with H'' > 0 on the positive axis."""

    H: ScalarFn
    H_prime: ScalarFn
    H_double_prime: ScalarFn

    def flux_potential(self, u):
        """u H'(u) - H(u), the quantity differenced in the stiff term."""
        u = np.asarray(u, dtype=float)
        return u * self.H_prime(u) - self.H(u)


@dataclass(frozen=True)
class SplitPotential:
    """External potential split V = V_c - V_e with both parts convex."""

    V_c: ScalarFn
    V_c_prime: ScalarFn
    V_c_double_prime: ScalarFn
    V_e: ScalarFn
    V_e_prime: ScalarFn
    V_e_double_prime: ScalarFn

    @classmethod
    def zero(cls) -> "SplitPotential":
        return cls(_zero, _zero, _zero, _zero, _zero, _zero)

    def V(self, x):
        return self.V_c(x) - self.V_e(x)

    def V_prime(self, x):
        return self.V_c_prime(x) - self.V_e_prime(x)


@dataclass(frozen=True)
class SplitKernel:
    """Even interaction kernel split W = W_c - W_e with convex parts.

    ``kink_at_zero`` carries the one-sided derivatives (W'(0-), W'(0+))
    of kernels like c|x| whose derivative jumps at the origin.  Pairwise
    sums treat the self-interaction of such kernels as the symmetric
    mean of the two one-sided values (zero for an even kernel).

    ``fast`` optionally provides closed-form/accelerated pairwise sums;
    it must agree with the generic quadrature path.
    """

    W_c: ScalarFn
    W_c_prime: ScalarFn
    W_c_double_prime: ScalarFn
    W_e: ScalarFn
    W_e_prime: ScalarFn
    W_e_double_prime: ScalarFn
    kink_at_zero: Optional[tuple[float, float]] = None
    fast: Optional[object] = None
    is_zero: bool = False

    @classmethod
    def zero(cls) -> "SplitKernel":
        return cls(_zero, _zero, _zero, _zero, _zero, _zero, is_zero=True)


@dataclass(frozen=True)
class ProblemSpec:
    """Full continuous problem: equation data, initial density, geometry.

    ``boundary_mode`` is "pinned" when u0 > 0 on the whole domain (the
    end particles stay put) or "free" when u0 is compactly supported on
    ``support`` (the end particles follow the interface law).
    """

    domain: tuple[float, float]
    mobility: Mobility
    energy: InternalEnergy
    potential: SplitPotential
    kernel: SplitKernel
    u0: ScalarFn
    boundary_mode: str
    support: tuple[float, float]
    name: str = ""

    def __post_init__(self):
        if self.boundary_mode not in ("pinned", "free"):
            raise ValueError("boundary_mode must be 'pinned' or 'free'")
        a, b = self.domain
        if not b > a:
            raise ValueError("empty domain")
        sa, sb = self.support
        if not sb > sa:
            raise ValueError("empty support")
        if self.boundary_mode == "pinned" and self.support != self.domain:
            raise ValueError("pinned mode requires support == domain")
        if sa < a or sb > b:
            raise ValueError("support must lie inside the domain")
        xs = np.linspace(sa, sb, 257)
        u = np.asarray(self.u0(xs), dtype=float)
        if self.boundary_mode == "pinned":
            if np.any(u <= 0.0):
                raise ValueError("pinned mode requires u0 > 0 on the domain")
        else:
            if abs(u[0]) > 1e-12 or abs(u[-1]) > 1e-12:
                raise ValueError("free mode requires u0 = 0 at the support edges")
            if np.any(u[1:-1] <= 0.0):
                raise ValueError("free mode requires u0 > 0 inside the support")

    @property
    def pinned(self) -> bool:
        return self.boundary_mode == "pinned"

    def make_grid(self, M: int):
        from .grid import LagrangianGrid

        return LagrangianGrid.uniform(self.support[0], self.support[1], M)


# ---------------------------------------------------------------------------
# example registry


def _require(params: dict, defaults: dict, example: str) -> dict:
    merged = dict(defaults)
    for key, value in params.items():
        if key not in defaults:
            raise ValueError(f"{example} does not take parameter {key!r}")
        merged[key] = float(value)
    return merged


def _power_energy(coeff: float, m: float) -> InternalEnergy:
    """H(u) = coeff/m * u^m, the H'(u) = coeff * u^(m-1) family."""
    if m <= 1.0:
        raise ValueError("exponent m must exceed 1")
    if coeff <= 0.0:
        raise ValueError("energy coefficient must be positive")
    return InternalEnergy(
        H=lambda u: (coeff / m) * np.power(u, m),
        H_prime=lambda u: coeff * np.power(u, m - 1.0),
        H_double_prime=lambda u: coeff * (m - 1.0) * np.power(u, m - 2.0),
    )


def _linear_mobility() -> Mobility:
    return Mobility(f=lambda u: np.asarray(u, dtype=float), f_prime_zero=1.0)


def _quadratic_potential(center: float, strength: float) -> SplitPotential:
    """Convex well strength/2 * (x - center)^2 assigned to the V_c slot."""
    return SplitPotential(
        V_c=lambda x: 0.5 * strength * (x - center) ** 2,
        V_c_prime=lambda x: strength * (x - center),
        V_c_double_prime=lambda x: np.full_like(np.asarray(x, dtype=float), strength),
        V_e=_zero,
        V_e_prime=_zero,
        V_e_double_prime=_zero,
    )


def _build_ex1(params: dict) -> ProblemSpec:
    p = _require(params, {"m": 2.0}, "ex1")
    m = p["m"]
    # H'(u) = m/(m-1) u^(m-1), i.e. H(u) = u^m/(m-1)
    energy = _power_energy(m / (m - 1.0), m)
    return ProblemSpec(
        domain=(-2.0, 2.0),
        mobility=_linear_mobility(),
        energy=energy,
        potential=_quadratic_potential(0.0, 1.0),
        kernel=SplitKernel.zero(),
        u0=lambda x: np.maximum(1.0 - np.abs(x), 0.0),
        boundary_mode="free",
        support=(-1.0, 1.0),
        name="ex1",
    )


def _build_ex2(params: dict) -> ProblemSpec:
    defaults = {"m": 2.0, "nu": 1.0, "mass": 4.2517e-2, "sigma": math.sqrt(0.2)}
    p = _require(params, defaults, "ex2")
    m, nu, mass, sigma = p["m"], p["nu"], p["mass"], p["sigma"]
    if mass <= 0.0 or sigma <= 0.0:
        raise ValueError("ex2 needs positive mass and sigma")
    amp = mass / math.sqrt(2.0 * math.pi * sigma**2)
    potential = SplitPotential(
        V_c=lambda x: 0.25 * x**4,
        V_c_prime=lambda x: x**3,
        V_c_double_prime=lambda x: 3.0 * x**2,
        V_e=lambda x: 0.5 * x**2,
        V_e_prime=lambda x: np.asarray(x, dtype=float),
        V_e_double_prime=lambda x: np.ones_like(np.asarray(x, dtype=float)),
    )
    return ProblemSpec(
        domain=(-2.0, 2.0),
        mobility=_linear_mobility(),
        energy=_power_energy(nu, m),
        potential=potential,
        kernel=SplitKernel.zero(),
        u0=lambda x: amp * np.exp(-(x**2) / (2.0 * sigma**2)),
        boundary_mode="pinned",
        support=(-2.0, 2.0),
        name="ex2",
    )


def _build_ex3(params: dict) -> ProblemSpec:
    p = _require(params, {"m": 2.0, "nu": 2.0, "theta": 0.25}, "ex3")
    m, nu, theta = p["m"], p["nu"], p["theta"]
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    center = -0.5 * math.pi
    # Repulsive hill V = -(x + pi/2)^2/2: concave, so it sits in the
    # explicit V_e slot.  Its pull at the support edges is cancelled
    # exactly by the kernel attraction (the initial mass is
    # pi(4-theta)/16, so c * mass = pi/2 for every theta), which is what
    # makes the interfaces wait.
    potential = SplitPotential(
        V_c=_zero,
        V_c_prime=_zero,
        V_c_double_prime=_zero,
        V_e=lambda x: 0.5 * (x - center) ** 2,
        V_e_prime=lambda x: x - center,
        V_e_double_prime=lambda x: np.ones_like(np.asarray(x, dtype=float)),
    )
    c = 8.0 / (4.0 - theta)
    kernel = SplitKernel(
        W_c=lambda r: c * np.abs(r),
        W_c_prime=lambda r: c * np.sign(r),
        W_c_double_prime=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
        W_e=_zero,
        W_e_prime=_zero,
        W_e_double_prime=_zero,
        kink_at_zero=(-c, c),
    )
    exponent = 1.0 / (m - 1.0)
    frac = (m - 1.0) / m

    def u0(x):
        x = np.asarray(x, dtype=float)
        s2 = np.sin(x) ** 2
        base = frac * ((1.0 - theta) * s2 + theta * s2 * s2)
        return np.power(np.maximum(base, 0.0), exponent)

    return ProblemSpec(
        domain=(-math.pi, 0.0),
        mobility=_linear_mobility(),
        energy=_power_energy(nu, m),
        potential=potential,
        kernel=kernel,
        u0=u0,
        boundary_mode="free",
        support=(-math.pi, 0.0),
        name="ex3",
    )


_EX4_CONST = -math.pi / (6.0 * math.sqrt(3.0))


def _ex4_H(u):
    """Closed-form antiderivative of log(u / cbrt(1 + u^3)), H(0) = 0."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    small = u < 1.0
    us = u[small]
    # u log u -> 0 at u = 0
    first = np.where(us > 0.0, us * np.log(np.where(us > 0.0, us, 1.0)), 0.0)
    out[small] = first - (us / 3.0) * np.log1p(us**3)
    ub = u[~small]
    out[~small] = -(ub / 3.0) * np.log1p(ub**-3)
    elementary = (
        np.log1p(u) / 3.0
        - np.log(u * u - u + 1.0) / 6.0
        + np.arctan((2.0 * u - 1.0) / math.sqrt(3.0)) / math.sqrt(3.0)
    )
    return out - elementary + _EX4_CONST


def _ex4_H_prime(u):
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    small = u < 1.0
    us = u[small]
    out[small] = np.log(us) - np.log1p(us**3) / 3.0
    ub = u[~small]
    # log u - log(1+u^3)/3 cancels catastrophically for large u
    out[~small] = -np.log1p(ub**-3) / 3.0
    return out


def _build_ex4(params: dict) -> ProblemSpec:
    p = _require(params, {"beta": 1.0, "mass": 1.0}, "ex4")
    beta, mass = p["beta"], p["mass"]
    if beta <= 0.0 or mass <= 0.0:
        raise ValueError("ex4 needs positive beta and mass")
    mobility = Mobility(f=lambda u: u * (1.0 + u**3), f_prime_zero=1.0)
    energy = InternalEnergy(
        H=_ex4_H,
        H_prime=_ex4_H_prime,
        H_double_prime=lambda u: 1.0 / (u * (1.0 + u**3)),
    )
    amp = mass / (2.0 * math.sqrt(2.0 * math.pi))

    def u0(x):
        x = np.asarray(x, dtype=float)
        return amp * (np.exp(-0.5 * (x - 2.0) ** 2) + np.exp(-0.5 * (x + 2.0) ** 2))

    return ProblemSpec(
        domain=(-6.0, 6.0),
        mobility=mobility,
        energy=energy,
        potential=_quadratic_potential(0.0, beta),
        kernel=SplitKernel.zero(),
        u0=u0,
        boundary_mode="pinned",
        support=(-6.0, 6.0),
        name="ex4",
    )


def _build_ex5(params: dict) -> ProblemSpec:
    p = _require(params, {"m": 1.5, "nu": 0.28, "sigma": 1.0}, "ex5")
    m, nu, sigma = p["m"], p["nu"], p["sigma"]
    if sigma <= 0.0:
        raise ValueError("ex5 needs positive sigma")
    s2 = sigma * sigma
    c = 1.0 / math.sqrt(2.0 * math.pi * s2)
    a = c / s2  # W_e'' = 2a + gaussian'' >= c/s2 > 0 everywhere

    def gauss(r):
        return np.exp(-(r * r) / (2.0 * s2))

    kernel = SplitKernel(
        W_c=lambda r: a * r * r,
        W_c_prime=lambda r: 2.0 * a * r,
        W_c_double_prime=lambda r: np.full_like(np.asarray(r, dtype=float), 2.0 * a),
        W_e=lambda r: a * r * r + c * gauss(r),
        W_e_prime=lambda r: 2.0 * a * r - (c / s2) * r * gauss(r),
        W_e_double_prime=lambda r: 2.0 * a
        + (c / s2) * ((r * r) / s2 - 1.0) * gauss(r),
        fast=QuadraticGaussianSums(a=a, c=c, sigma=sigma),
    )
    amp = 1.0 / (2.0 * math.sqrt(2.0 * math.pi))

    def u0(x):
        x = np.asarray(x, dtype=float)
        return amp * (np.exp(-0.5 * (x - 2.5) ** 2) + np.exp(-0.5 * (x + 2.5) ** 2))

    return ProblemSpec(
        domain=(-6.0, 6.0),
        mobility=_linear_mobility(),
        energy=_power_energy(nu, m),
        potential=SplitPotential.zero(),
        kernel=kernel,
        u0=u0,
        boundary_mode="pinned",
        support=(-6.0, 6.0),
        name="ex5",
    )


_BUILDERS = {
    "ex1": _build_ex1,
    "ex2": _build_ex2,
    "ex3": _build_ex3,
    "ex4": _build_ex4,
    "ex5": _build_ex5,
}


def build_example(example_id: str, params: Optional[dict] = None) -> ProblemSpec:
    """Build one of the five registered benchmark problems.

    ``params`` overrides the example's knobs (m, nu, theta, beta, mass,
    sigma); unknown or out-of-range values raise ValueError.
    """
    try:
        builder = _BUILDERS[example_id]
    except KeyError:
        raise ValueError(f"unknown example id {example_id!r}") from None
    return builder(dict(params or {}))


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class ValidationCheck:
    name: str
    passed: bool
    worst: float

    def __str__(self):
        tag = "ok" if self.passed else "FAIL"
        return f"{self.name:<24s} {tag:>4s}  worst={self.worst:.3e}"


@dataclass(frozen=True)
class ValidationReport:
    checks: Sequence[ValidationCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __str__(self):
        return "\n".join(str(c) for c in self.checks)

    def __getitem__(self, name: str) -> ValidationCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def validate_spec(spec: ProblemSpec, samples: int = 1000) -> ValidationReport:
    """Sample the standing assumptions and report every check.

    Failures are reported, never raised; the report lists each named
    check with its worst violation.
    """
    if samples < 2:
        raise ValueError("need at least two samples")
    checks = []

    sa, sb = spec.support
    xs = np.linspace(sa, sb, samples)
    u0 = np.asarray(spec.u0(xs), dtype=float)
    u_max = 10.0 * float(np.max(u0))
    if u_max <= 0.0:
        u_max = 1.0
    us = np.linspace(u_max / samples, u_max, samples)

    f0 = float(spec.mobility.f(np.asarray([0.0]))[0])
    checks.append(ValidationCheck("f_zero", abs(f0) <= 1e-14, abs(f0)))

    fu = np.asarray(spec.mobility.f(np.concatenate(([0.0], us))), dtype=float)
    worst = float(np.min(np.diff(fu)))
    checks.append(ValidationCheck("f_nondecreasing", worst >= -1e-12, worst))
    checks.append(
        ValidationCheck(
            "f_prime_zero_nonzero",
            spec.mobility.f_prime_zero != 0.0,
            abs(spec.mobility.f_prime_zero),
        )
    )

    hdd = np.asarray(spec.energy.H_double_prime(us), dtype=float)
    worst = float(np.min(hdd))
    checks.append(ValidationCheck("H_convex", worst > 0.0, worst))

    # finite-difference consistency of H' on u bounded away from zero
    uc = np.linspace(max(u_max * 1e-3, 1e-6), u_max, samples)
    du = 1e-6 * np.maximum(uc, 1.0)
    fd = (np.asarray(spec.energy.H(uc + du)) - np.asarray(spec.energy.H(uc - du))) / (
        2.0 * du
    )
    hp = np.asarray(spec.energy.H_prime(uc), dtype=float)
    rel = np.abs(fd - hp) / np.maximum(np.abs(hp), 1.0)
    worst = float(np.max(rel))
    checks.append(ValidationCheck("H_prime_consistent", worst <= 1e-6, worst))

    da, db = spec.domain
    xd = np.linspace(da, db, samples)
    for label, fn in (
        ("V_c_convex", spec.potential.V_c_double_prime),
        ("V_e_convex", spec.potential.V_e_double_prime),
    ):
        vals = np.asarray(fn(xd), dtype=float)
        worst = float(np.min(vals))
        checks.append(ValidationCheck(label, worst >= -1e-12, worst))

    width = db - da
    rs = np.linspace(-width, width, samples)
    for label, fn in (
        ("W_c_convex", spec.kernel.W_c_double_prime),
        ("W_e_convex", spec.kernel.W_e_double_prime),
    ):
        vals = np.asarray(fn(rs), dtype=float)
        worst = float(np.min(vals))
        checks.append(ValidationCheck(label, worst >= -1e-12, worst))

    for label, fn in (("W_c_even", spec.kernel.W_c), ("W_e_even", spec.kernel.W_e)):
        diff = np.abs(np.asarray(fn(rs)) - np.asarray(fn(-rs)))
        worst = float(np.max(diff))
        checks.append(ValidationCheck(label, worst <= 1e-12, worst))

    if spec.pinned:
        worst = float(np.min(u0))
        checks.append(ValidationCheck("u0_positive", worst > 0.0, worst))
    else:
        edge = max(abs(float(u0[0])), abs(float(u0[-1])))
        checks.append(ValidationCheck("u0_vanishes_at_edges", edge <= 1e-12, edge))
        worst = float(np.min(u0[1:-1]))
        checks.append(ValidationCheck("u0_positive_inside", worst > 0.0, worst))

    return ValidationReport(tuple(checks))
