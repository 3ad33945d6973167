"""Deterministic reference solvers for the limiting heat equations.

Three solvers on the periodic unit torus, all Crank-Nicolson in time with the
conservative flux-form spatial operator and cyclic tridiagonal solves:

* ``solve_linear_heat``     d rho/dt = D d2rho/dx2
* ``solve_nonlinear_heat``  d rho/dt = d/dx(a(rho)^2 drho/dx), diffusivity
                            lagged one level (first order in dt for strongly
                            nonlinear a, second order otherwise)
* ``solve_tilted``          d rho/dt = d/dx(D(rho) drho/dx) - d/dx(chi(rho) dH/dx)

The divergence form makes the discrete mass sum(rho)*dx exact up to roundoff;
each solver enforces its stated conservation tolerance and raises
``NumericalError`` on violation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from heatlab.core import DensityField, ModelSpec, TiltField, torus_grid
from heatlab.errors import NumericalError, ValidationError
from heatlab.tridiag import flux_divergence, midpoint_mobility, solve_cyclic_tridiag

Profile = "np.ndarray | Callable[[np.ndarray], np.ndarray]"
Source = Callable[[float, np.ndarray], np.ndarray]

LINEAR_MASS_RTOL = 1e-12
NONLINEAR_MASS_RTOL = 1e-10
NEGATIVITY_TOL = 1e-12
MAX_HALVINGS = 40


@dataclass(frozen=True)
class PdeGrid:
    """Uniform periodic space-time grid: nx points, nt time levels on [t0, t_end]."""

    nx: int
    nt: int
    t_end: float
    t0: float = 0.0

    def __post_init__(self):
        if self.nx < 8:
            raise ValidationError("need nx >= 8 spatial points")
        if self.nt < 2:
            raise ValidationError("need nt >= 2 time levels")
        if not (self.t_end > self.t0):
            raise ValidationError("t_end must exceed t0")

    @property
    def dx(self) -> float:
        return 1.0 / self.nx

    @property
    def dt(self) -> float:
        return (self.t_end - self.t0) / (self.nt - 1)

    @property
    def xs(self) -> np.ndarray:
        return torus_grid(self.nx)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.nt) * self.dt


def as_profile(rho0, xs: np.ndarray) -> np.ndarray:
    vals = np.asarray(rho0(xs) if callable(rho0) else rho0, dtype=float)
    if vals.shape != xs.shape:
        raise ValidationError(f"initial profile has shape {vals.shape}, grid has {xs.shape}")
    return vals.copy()


def _cn_step(u: np.ndarray, w_mid: np.ndarray, dt: float, dx: float,
             extra: np.ndarray | None = None) -> np.ndarray:
    """One Crank-Nicolson step of du/dt = div(w grad u) + extra.

    Solved in increment form, (I - dt/2 L) delta = dt*(L u + extra), so the
    mass roundoff per step scales with the update rather than the state.
    """
    c = 0.5 * dt / dx ** 2
    sup = -c * w_mid
    sub = -c * np.roll(w_mid, 1)
    diag = 1.0 + c * (w_mid + np.roll(w_mid, 1))
    rhs = dt * flux_divergence(w_mid, u, dx)
    if extra is not None:
        rhs = rhs + dt * extra
    return u + solve_cyclic_tridiag(sub, diag, sup, rhs)


def _check_mass(values: np.ndarray, rtol: float, what: str):
    masses = values.mean(axis=1)
    scale = max(abs(masses[0]), 1e-300)
    drift = np.max(np.abs(masses - masses[0])) / scale
    if drift > rtol:
        raise NumericalError(f"{what}: mass drift {drift:.3e} exceeds {rtol:.0e}")


def solve_linear_heat(rho0, diffusivity: float, grid: PdeGrid,
                      source: Source | None = None) -> DensityField:
    """Crank-Nicolson solution of the linear heat equation with diffusivity D."""
    if not (diffusivity > 0 and math.isfinite(diffusivity)):
        raise ValidationError("diffusivity must be positive")
    xs = grid.xs
    u = as_profile(rho0, xs)
    if np.any(u < 0):
        raise ValidationError("initial profile must be non-negative")
    w_mid = np.full(grid.nx, diffusivity)
    values = np.empty((grid.nt, grid.nx))
    values[0] = u
    for k in range(1, grid.nt):
        extra = None
        if source is not None:
            extra = np.asarray(source(grid.times[k - 1] + 0.5 * grid.dt, xs), dtype=float)
        u = _cn_step(u, w_mid, grid.dt, grid.dx, extra)
        values[k] = u
    _check_mass(values, LINEAR_MASS_RTOL, "linear heat" if source is None else "forced linear heat")
    return DensityField(grid.times, xs, _scrub_negative_dust(values))


def _scrub_negative_dust(values: np.ndarray) -> np.ndarray:
    """Clip roundoff-level negative values; genuine negativity is an error."""
    scale = max(float(np.max(np.abs(values))), 1e-300)
    if values.min() < -NEGATIVITY_TOL * scale:
        raise NumericalError(f"solver produced negative density {values.min():.3e}")
    return np.clip(values, 0.0, None)


def _advance_with_rejection(u, t, dt_target, one_step):
    """Advance by dt_target via one_step(u, t, dt), halving on negativity."""
    remaining = dt_target
    dt_try = dt_target
    halvings = 0
    while remaining > 1e-14 * dt_target:
        dt_try = min(dt_try, remaining)
        candidate = one_step(u, t, dt_try)
        if candidate.min() < -NEGATIVITY_TOL:
            halvings += 1
            if halvings > MAX_HALVINGS:
                raise NumericalError("time step rejected more than "
                                     f"{MAX_HALVINGS} times (negativity)")
            dt_try *= 0.5
            continue
        u = candidate
        t += dt_try
        remaining -= dt_try
        dt_try = min(2 * dt_try, remaining) if remaining > 0 else dt_try
    return u


def solve_nonlinear_heat(rho0, a: Callable[[np.ndarray], np.ndarray], grid: PdeGrid,
                         source: Source | None = None) -> DensityField:
    """Semi-implicit solution of d rho/dt = d/dx(a(rho)^2 drho/dx).

    The diffusivity a(rho)^2 is frozen at the previous level inside each
    Crank-Nicolson step; steps producing densities below -1e-12 are rejected
    and halved.
    """
    xs = grid.xs
    u0 = as_profile(rho0, xs)
    if np.any(u0 < 0):
        raise ValidationError("initial profile must be non-negative")

    def one_step(u, t, dt):
        w = np.asarray(a(u), dtype=float) ** 2
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValidationError("a(rho) must be positive and finite")
        extra = None
        if source is not None:
            extra = np.asarray(source(t + 0.5 * dt, xs), dtype=float)
        return _cn_step(u, midpoint_mobility(w), dt, grid.dx, extra)

    values = np.empty((grid.nt, grid.nx))
    values[0] = u0
    u = u0
    for k in range(1, grid.nt):
        u = _advance_with_rejection(u, grid.times[k - 1], grid.dt, one_step)
        values[k] = u
    _check_mass(values, NONLINEAR_MASS_RTOL, "nonlinear heat" if source is None else "forced nonlinear heat")
    return DensityField(grid.times, xs, _scrub_negative_dust(values))


def solve_tilted(rho0, model: ModelSpec, tilt: TiltField, grid: PdeGrid) -> DensityField:
    """Solve d rho/dt = d/dx(D(rho) drho/dx) - d/dx(chi(rho) dH/dx).

    Diffusion is Crank-Nicolson with the diffusivity frozen at the previous
    level; the tilt flux is evaluated at the half time level with one
    predictor-corrector pass for the mobility argument.
    """
    if not tilt.covers(grid.t0, grid.t_end):
        raise ValidationError("tilt field does not cover the solve interval")
    xs = grid.xs
    u0 = as_profile(rho0, xs)
    if np.any(u0 < 0):
        raise ValidationError("initial profile must be non-negative")

    def tilt_divergence(u, t_mid):
        h = tilt.value_at(t_mid, xs)
        chim = midpoint_mobility(model.mobility(u))
        return -flux_divergence(chim, h, grid.dx)

    def one_step(u, t, dt):
        w_mid = midpoint_mobility(model.diffusivity(u))
        t_mid = t + 0.5 * dt
        predictor = _cn_step(u, w_mid, dt, grid.dx, tilt_divergence(u, t_mid))
        corrected = _cn_step(u, w_mid, dt, grid.dx,
                             tilt_divergence(0.5 * (u + predictor), t_mid))
        return corrected

    values = np.empty((grid.nt, grid.nx))
    values[0] = u0
    u = u0
    for k in range(1, grid.nt):
        u = _advance_with_rejection(u, grid.times[k - 1], grid.dt, one_step)
        values[k] = u
    _check_mass(values, NONLINEAR_MASS_RTOL, "tilted heat")
    return DensityField(grid.times, xs, _scrub_negative_dust(values))
