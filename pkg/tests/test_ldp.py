import math

import numpy as np
import pytest

from conftest import cos_profile, single_mode_field
from heatlab.core import DensityField, ModelSpec, torus_grid
from heatlab.errors import ValidationError
from heatlab.hydro import PdeGrid, solve_linear_heat
from heatlab.ldp import (
    EllipticProblem,
    bb_action,
    cumulant_g,
    equilibrium_rate,
    hydrodynamic_residual,
    legendre_gap,
    onsager_apply,
    onsager_dual_norm_sq,
    pathwise_rate_direct,
    pathwise_rate_onsager,
    recover_tilt,
    spike_translation_family,
    tilt_action,
)
from heatlab.sampling import GammaLaw, RandomStream, sample_site, single_site_mgf

BEP1 = ModelSpec.bep(1.0)
KMP = ModelSpec.kmp()


class TestEquilibriumRate:
    def test_vanishes_at_background(self):
        assert equilibrium_rate(np.full(64, 1.3), 1.3, 2.0) == 0.0

    def test_constant_double_density(self):
        val = equilibrium_rate(np.full(256, 2.0), 1.0, 2.0)
        assert val == pytest.approx(1.0 - math.log(2.0), rel=1e-14)

    def test_matches_refined_quadrature(self):
        # grid value against a 64x finer quadrature of the same integrand
        coarse = equilibrium_rate(cos_profile(torus_grid(512)), 1.0, 2.0)
        fine = equilibrium_rate(cos_profile(torus_grid(32768)), 1.0, 2.0)
        assert coarse == pytest.approx(fine, abs=1e-8)

    def test_infinite_outside_domain(self):
        rho = np.ones(16)
        rho[3] = 0.0
        assert equilibrium_rate(rho, 1.0, 1.0) == math.inf

    def test_nonnegative_and_convex_along_segments(self):
        xs = torus_grid(128)
        rho = 1.0 + 0.7 * np.sin(2 * np.pi * xs) ** 2
        lams = np.linspace(0.0, 1.0, 11)
        vals = [equilibrium_rate(1.0 + lam * (rho - 1.0), 1.0, 2.0) for lam in lams]
        assert all(v >= 0 for v in vals)
        second = np.diff(vals, 2)
        assert np.all(second >= -1e-12)


class TestCumulant:
    def test_zero(self):
        assert cumulant_g(np.zeros(32), 1.0, 2.0) == 0.0

    def test_constant_half(self):
        assert cumulant_g(np.full(64, 0.5), 1.0, 2.0) == pytest.approx(math.log(2.0), rel=1e-14)

    def test_divergence(self):
        with pytest.raises(ValidationError):
            cumulant_g(np.full(8, 1.0), 1.0, 2.0)

    def test_convex_in_constant_directions(self):
        vals = [cumulant_g(np.full(16, phi), 1.0, 2.0) for phi in (0.1, 0.2, 0.3)]
        assert vals[0] - 2 * vals[1] + vals[2] >= 0.0

    def test_monte_carlo_pressure(self):
        # (1/N) log E[exp(N <phi, pi_N>)] against G(phi) at N = 256
        n, n_samples = 256, 10_000
        theta, m = 1.0, 2.0
        phi = 0.3 * np.cos(2 * np.pi * (np.arange(n) + 1.0) / n)
        law = GammaLaw(theta=theta, m=m)
        z = sample_site(law, RandomStream(909, 0), size=n * n_samples).reshape(n_samples, n)
        exponents = z @ phi
        log_mean = np.log(np.mean(np.exp(exponents - exponents.max()))) + exponents.max()
        estimate = log_mean / n
        assert abs(estimate - cumulant_g(phi, theta, m)) <= 0.02


class TestLegendre:
    def test_gap_zero_at_background(self):
        assert legendre_gap(np.full(32, 1.0), 1.0, 2.0) <= 1e-10

    def test_gap_constant_profile(self):
        assert abs(legendre_gap(np.full(128, 2.0), 1.0, 2.0)) <= 1e-10

    def test_gap_random_smooth_profile(self):
        xs = torus_grid(256)
        rho = 1.0 + 0.5 * np.cos(2 * np.pi * xs) + 0.2 * np.sin(4 * np.pi * xs)
        assert abs(legendre_gap(rho, 1.0, 2.0)) <= 1e-8
        assert abs(legendre_gap(rho, 0.75, 1.5)) <= 1e-8

    def test_rejects_nonpositive(self):
        rho = np.ones(16)
        rho[0] = 0.0
        with pytest.raises(ValidationError):
            legendre_gap(rho, 1.0, 2.0)


class TestEllipticProblem:
    def test_rejects_nonzero_mean(self):
        xs = torus_grid(32)
        with pytest.raises(ValidationError):
            EllipticProblem(np.ones(32), np.ones(32))
        EllipticProblem(np.ones(32), np.sin(2 * np.pi * xs))  # fine


class TestOnsager:
    def test_constant_potential_maps_to_zero(self):
        assert np.max(np.abs(onsager_apply(np.ones(32), np.full(32, 3.3), BEP1))) == 0.0

    def test_constant_coefficient_fourier_action(self):
        nx = 512
        xs = torus_grid(nx)
        xi = np.sin(2 * np.pi * xs)
        out = onsager_apply(np.ones(nx), xi, BEP1)
        # alpha = 4: K xi = -4 xi'' = 16 pi^2 sin(2 pi x) up to O(dx^2)
        assert np.max(np.abs(out - 16 * np.pi ** 2 * xi)) <= 16 * np.pi ** 2 * (2 * np.pi / nx) ** 2

    def test_self_adjoint(self):
        xs = torus_grid(128)
        rho = 1.0 + 0.4 * np.cos(2 * np.pi * xs)
        rng = np.random.default_rng(8)
        xi = rng.standard_normal(128)
        eta = rng.standard_normal(128)
        lhs = np.mean(xi * onsager_apply(rho, eta, BEP1))
        rhs = np.mean(eta * onsager_apply(rho, xi, BEP1))
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))

    def test_dual_norm_single_mode(self):
        nx = 512
        s = np.sin(2 * np.pi * torus_grid(nx))
        val = onsager_dual_norm_sq(np.ones(nx), s, BEP1)
        assert val == pytest.approx(1.0 / (32 * np.pi ** 2), rel=1e-3)

    def test_dual_norm_quadratic_scaling(self):
        nx = 128
        s = np.sin(4 * np.pi * torus_grid(nx))
        rho = 1.0 + 0.3 * np.cos(2 * np.pi * torus_grid(nx))
        base = onsager_dual_norm_sq(rho, s, KMP)
        assert onsager_dual_norm_sq(rho, 2.5 * s, KMP) == pytest.approx(6.25 * base, rel=1e-12)

    def test_duality_identity(self):
        nx = 128
        xs = torus_grid(nx)
        rho = 1.0 + 0.4 * np.cos(2 * np.pi * xs)
        xi = np.cos(2 * np.pi * xs) + 0.3 * np.sin(6 * np.pi * xs)
        k_xi = onsager_apply(rho, xi, BEP1)
        lhs = onsager_dual_norm_sq(rho, k_xi, BEP1)
        rhs = np.mean(xi * k_xi)
        assert abs(lhs - rhs) <= 1e-10 * abs(rhs)

    def test_dual_norm_rejects_nonzero_mean(self):
        with pytest.raises(ValidationError):
            onsager_dual_norm_sq(np.ones(16), np.ones(16), BEP1)


class TestRecoverTilt:
    def test_heat_solution_has_zero_tilt(self):
        # fine time grid: the residual is pure time-stencil mismatch, O(dt^2)
        grid = PdeGrid(nx=64, nt=16385, t_end=0.05)
        gamma = solve_linear_heat(lambda x: 1.0 + 0.3 * np.cos(2 * np.pi * x), 1.0, grid)
        tilt = recover_tilt(gamma, BEP1)
        assert np.max(np.abs(tilt.values)) <= 1e-8

    def test_single_mode_matches_refined_solve(self):
        gamma = single_mode_field(128, 129)
        tilt = recover_tilt(gamma, BEP1)
        fine = recover_tilt(single_mode_field(512, 513), BEP1)
        # compare on the shared subgrid at matching times
        sub = fine.values[::4, ::4]
        assert np.max(np.abs(tilt.values - sub)) <= 1e-4

    def test_mass_leak_detected(self):
        gamma = single_mode_field(64, 65)
        leaking = DensityField(gamma.times, gamma.xs,
                               gamma.values + 0.05 * gamma.times[:, None])
        with pytest.raises(ValidationError):
            recover_tilt(leaking, BEP1)

    def test_rejects_nonpositive_target(self):
        xs = torus_grid(32)
        times = np.linspace(0.0, 0.1, 4)
        vals = np.tile(np.maximum(np.cos(2 * np.pi * xs), 0.0), (4, 1))
        gamma = DensityField(times, xs, vals)
        with pytest.raises(ValidationError):
            recover_tilt(gamma, BEP1)


class TestPathwiseRates:
    def test_zero_on_heat_solutions(self):
        grid = PdeGrid(nx=128, nt=257, t_end=0.05)
        gamma = solve_linear_heat(lambda x: 1.0 + 0.3 * np.cos(2 * np.pi * x), 1.0, grid)
        assert pathwise_rate_direct(gamma, BEP1) <= 1e-10
        assert pathwise_rate_onsager(gamma, BEP1) <= 1e-10

    def test_single_mode_against_refined_oracle(self):
        value = pathwise_rate_direct(single_mode_field(256, 257), BEP1)
        oracle = pathwise_rate_direct(single_mode_field(1024, 1025), BEP1)
        assert abs(value - oracle) <= 1e-3 * oracle

    def test_direct_equals_onsager(self):
        gamma = single_mode_field(256, 257)
        for model in (BEP1, ModelSpec.bep(2.0), KMP):
            direct = pathwise_rate_direct(gamma, model)
            onsager = pathwise_rate_onsager(gamma, model)
            assert abs(direct - onsager) <= 1e-10 * direct

    def test_kmp_is_twice_bep1(self):
        gamma = single_mode_field(128, 129)
        i_bep = pathwise_rate_direct(gamma, BEP1)
        i_kmp = pathwise_rate_direct(gamma, KMP)
        assert abs(i_kmp - 2.0 * i_bep) <= 1e-10 * i_kmp

    def test_sign_convention_invariance(self):
        # both quadratic forms are even in H
        gamma = single_mode_field(64, 65)
        tilt = recover_tilt(gamma, BEP1)
        assert tilt_action(gamma, -tilt.values, BEP1) == \
            pytest.approx(tilt_action(gamma, tilt.values, BEP1), rel=1e-14)

    def test_nonnegative(self):
        gamma = single_mode_field(64, 65)
        assert pathwise_rate_direct(gamma, BEP1) >= 0.0


class TestBenamouBrenier:
    def test_zero_flux(self):
        xs = torus_grid(32)
        rho = DensityField(np.linspace(0, 1, 5), xs, np.ones((5, 32)))
        assert bb_action(rho, np.zeros((5, 32)), lambda r: r ** 2) == 0.0

    def test_constant_flux_analytic(self):
        xs = torus_grid(64)
        rho = DensityField(np.linspace(0, 1, 9), xs, np.ones((9, 64)))
        w0 = 0.4
        val = bb_action(rho, np.full((9, 64), w0), lambda r: r ** 2)
        assert val == pytest.approx(w0 ** 2, rel=1e-10)

    def test_continuity_violation_rejected(self):
        xs = torus_grid(32)
        times = np.linspace(0, 1, 5)
        rho = DensityField(times, xs, 1.0 + 0.5 * np.outer(times, np.cos(2 * np.pi * xs)))
        with pytest.raises(ValidationError):
            bb_action(rho, np.zeros((5, 32)), lambda r: r ** 2)

    def test_spike_amplification_monotone(self):
        actions = []
        for amp in (1, 2, 4, 8):
            rho, flux = spike_translation_family(amp)
            assert rho.values.min() > 0
            actions.append(bb_action(rho, flux, lambda r: r ** 2))
        assert all(a >= b for a, b in zip(actions, actions[1:]))

    def test_spike_family_fixed_endpoints(self):
        rho, _ = spike_translation_family(4)
        assert np.max(np.abs(rho.values[0] - rho.values[-1])) <= 1e-12


class TestResidualField:
    def test_solver_output_consistency(self):
        # the same flux-form operator is used by solver and residual, so the
        # only leftover is the time stencil mismatch, quadratic in dt
        def max_resid(nt):
            grid = PdeGrid(nx=32, nt=nt, t_end=0.02)
            gamma = solve_linear_heat(lambda x: 1.0 + 0.3 * np.cos(2 * np.pi * x), 1.0, grid)
            return np.max(np.abs(hydrodynamic_residual(gamma, BEP1)))

        r_coarse, r_fine = max_resid(65), max_resid(129)
        assert r_coarse / r_fine > 3.0
