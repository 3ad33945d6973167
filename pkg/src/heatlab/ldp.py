"""Large-deviation functionals: equilibrium rate and cumulant, tilt recovery,
pathwise rate by two routes, the Onsager operator and dual norm, and the
Benamou-Brenier action.

Pathwise-rate conventions
-------------------------
For a target trajectory gamma the hydrodynamic residual is

    r(t, x) = d(gamma)/dt - d/dx(D(gamma) d(gamma)/dx),

computed with second-order time stencils (centered inside, one-sided at the
endpoints) and the same conservative flux-form spatial operator the hydro
solvers use, so a solver output has r at the time-discretization level only.
The tilt H solves the well-posed periodic elliptic problem

    -d/dx(chi(gamma) dH/dx) = r,     mean(H) = 0,

rather than the formal antiderivative inversion, which on the torus leaves
the additive constant (and hence periodicity) undetermined.  The two rate
routes

    I_direct  = c_I * int int chi(gamma) (dH/dx)^2
    I_onsager = (1/2) * int ||r||^2_{K^-1} dt,   K = -d/dx(alpha(gamma) d/dx .)

agree identically on a common grid because alpha = lambda * chi with lambda a
power of two (4 for BEP/GBEP, 2 for KMP) and c_I = 1/(2*lambda): the discrete
summation-by-parts identity is exact, and scaling the mobility by a power of
two rescales the solve bit-exactly.

Sign of H: the tilted hydrodynamic equation is taken with the minus sign,
d(rho)/dt = d/dx(D drho/dx) - d/dx(chi dH/dx); both rates are quadratic in
dH/dx, so the opposite convention gives identical values (tested).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from heatlab.core import DensityField, ModelSpec, TiltField, torus_grid
from heatlab.errors import ValidationError
from heatlab.tridiag import (
    flux_divergence,
    forward_diff,
    midpoint_mobility,
    solve_periodic_poisson,
)

RESIDUAL_MEAN_RTOL = 1e-8
SOURCE_MEAN_RTOL = 1e-10
CONTINUITY_TOL = 1e-8


# ---------------------------------------------------------------------------
# Equilibrium functionals
# ---------------------------------------------------------------------------


def equilibrium_rate(rho: np.ndarray, rho0: float, m: float) -> float:
    """Static rate S(rho) = (m/2) int (rho/rho0 - 1 - log(rho/rho0)) dx.

    Returns +inf (the distinguished out-of-domain value) if rho is not
    strictly positive anywhere on the grid.
    """
    if not (rho0 > 0 and m > 0):
        raise ValidationError("need rho0 > 0 and m > 0")
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        return math.inf
    u = rho / rho0
    return 0.5 * m * float(np.mean(u - 1.0 - np.log(u)))


def cumulant_g(phi: np.ndarray, theta: float, m: float) -> float:
    """Scaled cumulant generating function G(phi) = -(m/2) int log(1 - theta*phi) dx."""
    if not (theta > 0 and m > 0):
        raise ValidationError("need theta > 0 and m > 0")
    phi = np.asarray(phi, dtype=float)
    if np.max(phi) >= 1.0 / theta:
        raise ValidationError(f"cumulant diverges: sup phi = {phi.max()} >= 1/theta = {1/theta}")
    return -0.5 * m * float(np.mean(np.log1p(-theta * phi)))


def legendre_gap(rho: np.ndarray, rho0: float, m: float, n_trials: int = 9) -> float:
    """S(rho) minus the best Legendre lower bound over a trial tilt family.

    The family is the pointwise stationarity solution
    phi*(x) = (1/theta)(1 - m*theta/(2*rho(x))) together with its scalings
    lambda*phi*, lambda in [0, 1] on an n_trials grid; the optimizer is
    admissible (sup phi* < 1/theta) whenever rho > 0, and attains the
    supremum, so the gap is zero up to roundoff.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ValidationError("legendre_gap requires a strictly positive profile")
    if n_trials < 1:
        raise ValidationError("need at least one trial function")
    theta = 2.0 * rho0 / m
    phi_star = (1.0 - m * theta / (2.0 * rho)) / theta
    best = -math.inf
    for lam in np.linspace(0.0, 1.0, n_trials):
        phi = lam * phi_star
        best = max(best, float(np.mean(phi * rho)) - cumulant_g(phi, theta, m))
    return equilibrium_rate(rho, rho0, m) - best


# ---------------------------------------------------------------------------
# Elliptic problem and Onsager operator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EllipticProblem:
    """-d/dx(w dh/dx) = s on the torus, mean-zero gauge.

    Solvability requires (numerically) zero-mean s; the solve verifies the
    discrete residual against 1e-10 * ||s||.
    """

    mobility: np.ndarray
    source: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.mobility, dtype=float)
        s = np.asarray(self.source, dtype=float)
        if w.shape != s.shape or w.ndim != 1:
            raise ValidationError("mobility and source must be matching 1-d profiles")
        if np.any(w <= 0):
            raise ValidationError("mobility must be strictly positive")
        norm = np.linalg.norm(s)
        if norm > 0 and abs(s.mean()) * math.sqrt(s.size) > SOURCE_MEAN_RTOL * norm:
            raise ValidationError("elliptic source must have zero mean (non-conservative data)")
        object.__setattr__(self, "mobility", w)
        object.__setattr__(self, "source", s)

    @property
    def dx(self) -> float:
        return 1.0 / self.mobility.size

    def solve(self) -> np.ndarray:
        return solve_periodic_poisson(self.mobility, self.source, self.dx)


def onsager_apply(rho: np.ndarray, xi: np.ndarray, model: ModelSpec) -> np.ndarray:
    """K_rho xi = -d/dx(alpha(rho) d xi/dx), conservative second-order stencil."""
    rho = np.asarray(rho, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if rho.shape != xi.shape or rho.ndim != 1:
        raise ValidationError("rho and xi must be matching 1-d profiles")
    dx = 1.0 / rho.size
    return -flux_divergence(midpoint_mobility(model.onsager_mobility(rho)), xi, dx)


def onsager_dual_norm_sq(rho: np.ndarray, s: np.ndarray, model: ModelSpec) -> float:
    """||s||^2 in the dual (inverse-operator) norm: int s K_rho^{-1} s dx."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ValidationError("dual norm requires a strictly positive profile")
    problem = EllipticProblem(model.onsager_mobility(rho), np.asarray(s, dtype=float))
    h = problem.solve()
    return float(np.mean(problem.source * h))


# ---------------------------------------------------------------------------
# Hydrodynamic residual and tilt recovery
# ---------------------------------------------------------------------------


def time_derivative(values: np.ndarray, dt: float) -> np.ndarray:
    """Second-order time derivative: centered inside, one-sided at the ends."""
    if values.shape[0] < 3:
        raise ValidationError("need at least 3 time levels for the time derivative")
    out = np.empty_like(values)
    out[1:-1] = (values[2:] - values[:-2]) / (2.0 * dt)
    out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dt)
    out[-1] = (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * dt)
    return out


def hydrodynamic_residual(gamma: DensityField, model: ModelSpec) -> np.ndarray:
    """r = d(gamma)/dt - d/dx(D(gamma) d(gamma)/dx), projected to zero spatial mean.

    Raises if gamma is not strictly positive or if any level's residual mean
    exceeds the conservation tolerance (a mass-leaking target has no
    conservative tilt representation).
    """
    if np.any(gamma.values <= 0):
        raise ValidationError("target trajectory must be strictly positive")
    dgdt = time_derivative(gamma.values, gamma.dt)
    w_mid = midpoint_mobility(model.diffusivity(gamma.values))
    r = dgdt - flux_divergence(w_mid, gamma.values, gamma.dx)

    means = r.mean(axis=1)
    duration = gamma.t_end - gamma.t0
    scale = np.sqrt((r ** 2).mean(axis=1)) + np.max(np.abs(gamma.values)) / duration
    bad = np.abs(means) > RESIDUAL_MEAN_RTOL * scale
    if np.any(bad):
        k = int(np.argmax(np.abs(means) / scale))
        raise ValidationError(
            f"residual at t={gamma.times[k]:.6g} has spatial mean {means[k]:.3e}: "
            "the target trajectory does not conserve mass")
    return r - means[:, None]


def _tilt_levels(gamma: DensityField, model: ModelSpec, residual: np.ndarray) -> np.ndarray:
    chi = model.mobility(gamma.values)
    h = np.empty_like(residual)
    for k in range(gamma.nt):
        h[k] = solve_periodic_poisson(chi[k], residual[k], gamma.dx)
    return h


def recover_tilt(gamma: DensityField, model: ModelSpec) -> TiltField:
    """Tilt field H making gamma a solution of the tilted hydrodynamic equation.

    Solves -d/dx(chi(gamma) dH/dx) = r level by level with mean-zero gauge.
    """
    r = hydrodynamic_residual(gamma, model)
    return TiltField.gauge_fixed(gamma.times, gamma.xs, _tilt_levels(gamma, model, r))


def _time_weights(nt: int, dt: float) -> np.ndarray:
    w = np.full(nt, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def tilt_action(gamma: DensityField, tilt_values: np.ndarray, model: ModelSpec) -> float:
    """c_I * int int chi(gamma) (dH/dx)^2 dx dt on gamma's grid.

    The gradient is evaluated on midpoints, pairing exactly with the elliptic
    operator's summation-by-parts identity.
    """
    tilt_values = np.asarray(tilt_values, dtype=float)
    if tilt_values.shape != gamma.values.shape:
        raise ValidationError("tilt values must live on the trajectory grid")
    chi_mid = midpoint_mobility(model.mobility(gamma.values))
    grad_sq = forward_diff(tilt_values, gamma.dx) ** 2
    per_level = (chi_mid * grad_sq).mean(axis=1)
    return model.rate_prefactor * float(np.dot(_time_weights(gamma.nt, gamma.dt), per_level))


def pathwise_rate_direct(gamma: DensityField, model: ModelSpec) -> float:
    """Pathwise rate via the recovered tilt: c_I int int chi(gamma) (dH/dx)^2."""
    r = hydrodynamic_residual(gamma, model)
    h = _tilt_levels(gamma, model, r)
    return tilt_action(gamma, h, model)


def pathwise_rate_onsager(gamma: DensityField, model: ModelSpec) -> float:
    """Pathwise rate as (1/2) int ||r(t,.)||^2 in the inverse-Onsager norm."""
    r = hydrodynamic_residual(gamma, model)
    alpha = model.onsager_mobility(gamma.values)
    per_level = np.empty(gamma.nt)
    for k in range(gamma.nt):
        h = solve_periodic_poisson(alpha[k], r[k], gamma.dx)
        per_level[k] = np.mean(r[k] * h)
    return 0.5 * float(np.dot(_time_weights(gamma.nt, gamma.dt), per_level))


# ---------------------------------------------------------------------------
# Benamou-Brenier action
# ---------------------------------------------------------------------------


def bb_action(rho: DensityField, flux: np.ndarray, alpha) -> float:
    """Transport action int_0^1 int w^2 / alpha(rho) dx dt, time rescaled to [0,1].

    `flux[k, j]` is the flux through the right edge of cell j at time level k,
    so the discrete continuity equation reads

        d(rho_j)/dt = (w_j - w_{j-1}) / dx     (periodic in j),

    with the same time stencil as the rate functionals.  It is checked to
    1e-8; a violating pair is rejected.  Affine time rescaling onto [0,1]
    multiplies the raw space-time integral by the duration.
    """
    flux = np.asarray(flux, dtype=float)
    if flux.shape != rho.values.shape:
        raise ValidationError("flux must live on the density grid")
    dgdt = time_derivative(rho.values, rho.dt)
    div = (flux - np.roll(flux, 1, axis=-1)) / rho.dx
    scale = max(1.0, float(np.max(np.abs(dgdt))))
    violation = float(np.max(np.abs(dgdt - div)))
    if violation > CONTINUITY_TOL * scale:
        raise ValidationError(f"continuity equation violated: max |d rho/dt - div w| = "
                              f"{violation:.3e} (tol {CONTINUITY_TOL:.0e} * {scale:.3g})")
    mob = np.asarray(alpha(rho.values), dtype=float)
    if np.any(mob <= 0) or not np.all(np.isfinite(mob)):
        raise ValidationError("alpha(rho) must be positive and finite on the path")
    per_level = (flux ** 2 / mob).mean(axis=1)
    duration = rho.t_end - rho.t0
    return duration * float(np.dot(_time_weights(rho.nt, rho.dt), per_level))


def spike_translation_family(amplification: float, *, nx: int = 1024, nt: int = 513,
                             mass: float = 0.1, kappa0: float = 30.0,
                             background: float = 1.0) -> tuple[DensityField, np.ndarray]:
    """Closed transport loop demonstrating the quadratic-mobility degeneracy.

    A wrapped-Gaussian bump of fixed mass and concentration kappa0 * M^2
    rides once around the torus on t in [0, 1]; the start and end profiles
    coincide for every amplification M.  The flux is constructed discretely
    (cumulative sums of the discrete time derivative), so the continuity
    check in `bb_action` holds to machine precision.  For alpha(rho) = rho^2
    the integrand w^2/rho^2 saturates at O(1) on the spike's shrinking
    support, so the action of the same macroscopic excursion decreases as M
    grows: transport through amplified density is asymptotically free, which
    is why no metric is induced.
    """
    if amplification < 1:
        raise ValidationError("amplification must be >= 1")
    xs = torus_grid(nx)
    times = np.linspace(0.0, 1.0, nt)
    kappa = kappa0 * amplification ** 2
    if 3.0 * math.sqrt(kappa) > nx / 2:
        raise ValidationError(f"grid too coarse for amplification {amplification}: "
                              f"need nx > {6 * math.sqrt(kappa):.0f}")
    if nt - 1 < 2.0 * math.pi * math.sqrt(kappa):
        # the travelling spike must also be resolved by the time stencil
        raise ValidationError(f"time grid too coarse for amplification {amplification}: "
                              f"need nt > {2 * math.pi * math.sqrt(kappa):.0f}")

    bump = np.exp(kappa * (np.cos(2 * np.pi * (xs[None, :] - times[:, None])) - 1.0))
    bump *= mass / bump.mean(axis=1, keepdims=True)  # exact discrete mass per level
    values = background + bump
    rho = DensityField(times, xs, values)

    dgdt = time_derivative(values, rho.dt)
    dgdt -= dgdt.mean(axis=1, keepdims=True)
    flux = np.cumsum(dgdt, axis=1) * rho.dx
    flux += -mass - flux.mean(axis=1, keepdims=True)  # zero flux away from the spike
    return rho, flux
