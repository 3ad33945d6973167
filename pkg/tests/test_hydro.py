import numpy as np
import pytest

from conftest import cos_profile, single_mode_field
from heatlab.core import TiltField, ModelSpec, torus_grid
from heatlab.errors import NumericalError, ValidationError
from heatlab.hydro import PdeGrid, solve_linear_heat, solve_nonlinear_heat, solve_tilted
from heatlab.tridiag import (
    flux_divergence,
    midpoint_mobility,
    solve_cyclic_tridiag,
    solve_periodic_poisson,
)


class TestTridiag:
    def test_cyclic_solver_matches_dense(self):
        rng = np.random.default_rng(0)
        n = 37
        sub = rng.random(n) * 0.3
        sup = rng.random(n) * 0.3
        diag = 1.0 + rng.random(n)
        dense = np.diag(diag) + np.diag(sup[:-1], 1) + np.diag(sub[1:], -1)
        dense[0, -1] = sub[0]
        dense[-1, 0] = sup[-1]
        rhs = rng.standard_normal(n)
        x = solve_cyclic_tridiag(sub, diag, sup, rhs)
        assert np.allclose(dense @ x, rhs, atol=1e-12)

    def test_cyclic_solver_multiple_rhs(self):
        n = 16
        sub = np.full(n, -0.25)
        sup = np.full(n, -0.25)
        diag = np.full(n, 1.5)
        rhs = np.random.default_rng(1).standard_normal((n, 3))
        x = solve_cyclic_tridiag(sub, diag, sup, rhs)
        for j in range(3):
            xj = solve_cyclic_tridiag(sub, diag, sup, rhs[:, j])
            assert np.allclose(x[:, j], xj, rtol=1e-14, atol=1e-15)

    def test_poisson_residual_and_gauge(self):
        nx = 128
        xs = torus_grid(nx)
        w = 1.0 + 0.5 * np.cos(2 * np.pi * xs) ** 2
        s = np.sin(4 * np.pi * xs) + 0.2 * np.cos(2 * np.pi * xs)
        h = solve_periodic_poisson(w, s, 1.0 / nx)
        resid = -flux_divergence(midpoint_mobility(w), h, 1.0 / nx) - (s - s.mean())
        assert np.linalg.norm(resid) <= 1e-10 * np.linalg.norm(s)
        assert abs(h.mean()) < 1e-14

    def test_poisson_rejects_nonpositive_mobility(self):
        with pytest.raises(ValidationError):
            solve_periodic_poisson(np.zeros(8), np.zeros(8), 0.125)


class TestLinearHeat:
    def test_constant_stays_constant(self):
        grid = PdeGrid(nx=32, nt=17, t_end=0.1)
        field = solve_linear_heat(lambda x: 2.0 * np.ones_like(x), 1.0, grid)
        assert np.max(np.abs(field.values - 2.0)) < 1e-13

    def test_fourier_mode_decay(self):
        grid = PdeGrid(nx=256, nt=513, t_end=0.05)
        field = solve_linear_heat(cos_profile, 1.0, grid)
        exact = 1.0 + 0.5 * np.exp(-4 * np.pi ** 2 * 0.05) * np.cos(2 * np.pi * grid.xs)
        assert np.max(np.abs(field.values[-1] - exact)) <= 1e-5

    def test_second_order_convergence(self):
        def err(nx, nt):
            grid = PdeGrid(nx=nx, nt=nt, t_end=0.05)
            field = solve_linear_heat(cos_profile, 1.0, grid)
            exact = 1.0 + 0.5 * np.exp(-4 * np.pi ** 2 * 0.05) * np.cos(2 * np.pi * grid.xs)
            return np.max(np.abs(field.values[-1] - exact))

        e_coarse = err(32, 33)
        e_fine = err(64, 65)
        assert 2.9 <= e_coarse / e_fine <= 5.5  # factor ~4 at order 2

    def test_mass_conservation(self):
        grid = PdeGrid(nx=128, nt=257, t_end=0.1)
        field = solve_linear_heat(cos_profile, 2.0, grid)
        assert field.mass_drift() <= 1e-12

    def test_comparison_principle(self):
        # ordered initial data stay ordered for the linear solver
        rng = np.random.default_rng(42)
        grid = PdeGrid(nx=64, nt=65, t_end=0.03)
        for _ in range(5):
            amp = rng.uniform(0.1, 0.4)
            k = rng.integers(1, 4)
            low = lambda x: 1.0 + amp * np.cos(2 * np.pi * k * x)
            gap = rng.uniform(0.05, 0.5)
            high = lambda x: low(x) + gap * (1.0 + 0.5 * np.sin(2 * np.pi * x))
            fa = solve_linear_heat(low, 1.0, grid)
            fb = solve_linear_heat(high, 1.0, grid)
            assert np.all(fb.values >= fa.values - 1e-12)


class TestNonlinearHeat:
    def test_constant_rate_reduces_to_linear(self):
        grid = PdeGrid(nx=64, nt=129, t_end=0.05)
        lin = solve_linear_heat(cos_profile, 1.0, grid)
        non = solve_nonlinear_heat(cos_profile, lambda r: np.ones_like(r), grid)
        assert np.max(np.abs(lin.values - non.values)) <= 1e-10

    def test_sqrt_m_rate_reduces_to_linear_m(self):
        m = 3.0
        grid = PdeGrid(nx=64, nt=129, t_end=0.02)
        lin = solve_linear_heat(cos_profile, m, grid)
        non = solve_nonlinear_heat(cos_profile, lambda r: np.full_like(r, np.sqrt(m)), grid)
        assert np.max(np.abs(lin.values - non.values)) <= 1e-10

    def test_manufactured_solution(self):
        # rho* = 1 + 0.3 e^{-t} cos(2 pi x) forced into d_t rho = d_x(rho d_x rho) + f
        def exact(t, x):
            return 1.0 + 0.3 * np.exp(-t) * np.cos(2 * np.pi * x)

        def forcing(t, x):
            beta = 0.3 * np.exp(-t)
            c = np.cos(2 * np.pi * x)
            return beta * ((4 * np.pi ** 2 - 1.0) * c
                           + 4 * np.pi ** 2 * beta * np.cos(4 * np.pi * x))

        grid = PdeGrid(nx=256, nt=2049, t_end=0.1)
        field = solve_nonlinear_heat(lambda x: exact(0.0, x), lambda r: np.sqrt(r),
                                     grid, source=forcing)
        err = np.max(np.abs(field.values[-1] - exact(0.1, grid.xs)))
        assert err <= 1e-4

    def test_mass_conservation(self):
        grid = PdeGrid(nx=64, nt=129, t_end=0.05)
        field = solve_nonlinear_heat(cos_profile, lambda r: np.sqrt(r), grid)
        assert field.mass_drift() <= 1e-10


class TestTilted:
    @staticmethod
    def _zero_tilt(nx):
        xs = torus_grid(nx)
        times = np.linspace(0.0, 1.0, 3)
        return TiltField(times, xs, np.zeros((3, nx)))

    def test_zero_tilt_reproduces_untilted(self):
        grid = PdeGrid(nx=64, nt=65, t_end=0.02)
        tilted = solve_tilted(cos_profile, ModelSpec.bep(1.0), self._zero_tilt(64), grid)
        plain = solve_linear_heat(cos_profile, 1.0, grid)
        assert np.max(np.abs(tilted.values - plain.values)) <= 1e-12

    def test_mass_conserved_under_any_tilt(self):
        nx = 64
        xs = torus_grid(nx)
        times = np.linspace(0.0, 1.0, 5)
        tilt = TiltField.gauge_fixed(
            times, xs, np.outer(1.0 + times, np.sin(2 * np.pi * xs) + 0.3 * np.cos(4 * np.pi * xs)))
        grid = PdeGrid(nx=nx, nt=129, t_end=0.05)
        field = solve_tilted(cos_profile, ModelSpec.bep(1.0), tilt, grid)
        assert field.mass_drift() <= 1e-10

    def test_round_trip_with_recovered_tilt(self):
        # gamma -> H -> tilted solve from gamma(0) returns gamma
        from heatlab.ldp import recover_tilt

        gamma = single_mode_field(256, 257, t_end=0.1)
        tilt = recover_tilt(gamma, ModelSpec.bep(1.0))
        grid = PdeGrid(nx=256, nt=257, t_end=0.1)
        back = solve_tilted(gamma.values[0], ModelSpec.bep(1.0), tilt, grid)
        assert np.max(np.abs(back.values - gamma.values)) <= 1e-3

    def test_tilt_must_cover_interval(self):
        grid = PdeGrid(nx=64, nt=17, t_end=2.0)
        with pytest.raises(ValidationError):
            solve_tilted(cos_profile, ModelSpec.bep(1.0), self._zero_tilt(64), grid)


class TestGridValidation:
    def test_grid_bounds(self):
        with pytest.raises(ValidationError):
            PdeGrid(nx=4, nt=8, t_end=1.0)
        with pytest.raises(ValidationError):
            PdeGrid(nx=16, nt=1, t_end=1.0)
        with pytest.raises(ValidationError):
            PdeGrid(nx=16, nt=8, t_end=0.0)
