"""Cyclic tridiagonal and periodic elliptic solves shared by hydro and ldp.

All spatial operators below are the conservative (flux-form) second-order
discretization of d/dx(w(x) d/dx .) on the uniform periodic grid: mobilities
are averaged onto midpoints w_{j+1/2} = (w_j + w_{j+1})/2 and the operator is

    [div(w grad u)]_j = (w_{j+1/2}(u_{j+1}-u_j) - w_{j-1/2}(u_j-u_{j-1})) / dx^2.

This form is symmetric, has exact zero column sums (discrete conservation)
and satisfies the exact summation-by-parts identity

    -sum_j u_j [div(w grad u)]_j = sum_j w_{j+1/2} (u_{j+1}-u_j)^2 / dx^2,

which the rate-functional module relies on.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded

from heatlab.errors import NumericalError, ValidationError

ELLIPTIC_RTOL = 1e-10


def midpoint_mobility(w_sites: np.ndarray) -> np.ndarray:
    """w_{j+1/2} = (w_j + w_{j+1})/2 with periodic wrap; works on (..., nx)."""
    w = np.asarray(w_sites, dtype=float)
    return 0.5 * (w + np.roll(w, -1, axis=-1))


def flux_divergence(w_mid: np.ndarray, u: np.ndarray, dx: float) -> np.ndarray:
    """Conservative discrete d/dx(w du/dx); broadcasts over leading axes."""
    g = w_mid * (np.roll(u, -1, axis=-1) - u)
    return (g - np.roll(g, 1, axis=-1)) / dx ** 2


def forward_diff(u: np.ndarray, dx: float) -> np.ndarray:
    """(u_{j+1} - u_j)/dx at the midpoints, periodic."""
    return (np.roll(u, -1, axis=-1) - u) / dx


def solve_cyclic_tridiag(sub: np.ndarray, diag: np.ndarray, sup: np.ndarray,
                         rhs: np.ndarray) -> np.ndarray:
    """Solve the cyclic tridiagonal system A x = rhs.

    sub[j] couples row j to x[j-1] (sub[0] is the corner coupling to x[n-1]),
    sup[j] couples row j to x[j+1] (sup[n-1] is the corner coupling to x[0]).
    Sherman-Morrison correction around a banded core solve; rhs may be
    (n,) or (n, k) for multiple right-hand sides.
    """
    n = diag.size
    if n < 3:
        raise ValidationError("cyclic tridiagonal systems need n >= 3")
    gamma = -diag[0]
    bmod = diag.copy()
    bmod[0] = diag[0] - gamma
    bmod[-1] = diag[-1] - sup[-1] * sub[0] / gamma

    rhs2 = rhs if rhs.ndim == 2 else rhs[:, None]
    u = np.zeros((n, 1))
    u[0, 0] = gamma
    u[-1, 0] = sup[-1]
    stacked = np.hstack([rhs2, u])

    ab = np.zeros((3, n))
    ab[0, 1:] = sup[:-1]
    ab[1, :] = bmod
    ab[2, :-1] = sub[1:]
    sol = solve_banded((1, 1), ab, stacked)

    y, q = sol[:, :-1], sol[:, -1]
    vy = y[0] + (sub[0] / gamma) * y[-1]
    vq = q[0] + (sub[0] / gamma) * q[-1]
    x = y - np.outer(q, vy / (1.0 + vq))
    return x if rhs.ndim == 2 else x[:, 0]


def solve_periodic_poisson(w_sites: np.ndarray, source: np.ndarray, dx: float,
                           check_residual: bool = True) -> np.ndarray:
    """Solve -d/dx(w dh/dx) = source on the torus with mean-zero gauge.

    The periodic operator is singular with constant null space, so the system
    is solvable only for zero-mean sources (the caller is expected to validate
    and project); here the mean is removed exactly before solving.  One
    unknown is pinned to zero, which reduces the wrap-around system to a plain
    tridiagonal solve on the same Thomas core as the cyclic solver, and the
    gauge is restored by subtracting the mean of the solution.
    """
    w = np.asarray(w_sites, dtype=float)
    s = np.asarray(source, dtype=float)
    n = w.size
    if np.any(w <= 0):
        raise ValidationError("mobility profile must be strictly positive")
    if s.shape != (n,):
        raise ValidationError("source must match the mobility grid")
    s = s - s.mean()
    if not np.any(s):
        return np.zeros(n)

    wm = midpoint_mobility(w)  # wm[j] = w_{j+1/2}
    # unknowns h_1..h_{n-1} with h_0 pinned at 0; row j couples j-1, j, j+1
    diag = wm[:-1] + wm[1:]
    sub = -wm[1:-1]
    sup = -wm[1:-1]
    ab = np.zeros((3, n - 1))
    ab[0, 1:] = sup
    ab[1, :] = diag
    ab[2, :-1] = sub
    h_rest = solve_banded((1, 1), ab, s[1:] * dx ** 2)
    h = np.concatenate(([0.0], h_rest))
    h -= h.mean()

    if check_residual:
        resid = -flux_divergence(wm, h, dx) - s
        scale = float(np.linalg.norm(s))
        if np.linalg.norm(resid) > ELLIPTIC_RTOL * scale:
            raise NumericalError(
                f"elliptic residual {np.linalg.norm(resid):.3e} exceeds "
                f"{ELLIPTIC_RTOL:.0e} * ||s|| = {ELLIPTIC_RTOL * scale:.3e}")
    return h
