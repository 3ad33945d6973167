import numpy as np
import pytest
from scipy.special import gammainc
from scipy.stats import kstest

from heatlab.errors import ValidationError
from heatlab.sampling import (
    GammaLaw,
    RandomStream,
    sample_invariant_state,
    sample_site,
    single_site_mgf,
)

N_DRAWS = 100_000


class TestGammaLaw:
    def test_moments(self):
        law = GammaLaw(theta=2.0, m=3.0)
        assert law.mean == 3.0
        assert law.variance == 6.0
        assert law.shape == 1.5

    def test_validation(self):
        with pytest.raises(ValidationError):
            GammaLaw(theta=0.0, m=1.0)
        with pytest.raises(ValidationError):
            GammaLaw(theta=1.0, m=-2.0)


class TestSampleSite:
    def test_mean_within_three_sigma(self):
        # rho0 = m theta / 2 = 1 for theta = 1, m = 2
        law = GammaLaw(theta=1.0, m=2.0)
        x = sample_site(law, RandomStream(2024, 0), size=N_DRAWS)
        se = x.std(ddof=1) / np.sqrt(N_DRAWS)
        assert abs(x.mean() - 1.0) <= 3 * se

    def test_variance_m3(self):
        law = GammaLaw(theta=1.0, m=3.0)
        x = sample_site(law, RandomStream(99, 1), size=N_DRAWS)
        # SE of the sample variance from the fourth moment
        v = x.var(ddof=1)
        se = np.sqrt((np.mean((x - x.mean()) ** 4) - v ** 2) / N_DRAWS)
        assert abs(v - law.variance) <= 3 * se

    def test_shape_one_is_exponential(self):
        # m = 2: Gamma(1, theta) = Exp(mean theta)
        theta = 0.7
        x = sample_site(GammaLaw(theta=theta, m=2.0), RandomStream(7, 0), size=N_DRAWS)
        stat = kstest(x, lambda v: 1.0 - np.exp(-v / theta)).statistic
        assert stat < 1.63 / np.sqrt(N_DRAWS)  # p = 0.01 critical value

    def test_small_shape_ks_against_incomplete_gamma(self):
        # theta = 2, m = 1: shape 1/2 exercises the boost branch
        theta, m = 2.0, 1.0
        x = sample_site(GammaLaw(theta=theta, m=m), RandomStream(31337, 4), size=N_DRAWS)
        stat = kstest(x, lambda v: gammainc(m / 2.0, v / theta)).statistic
        assert stat < 1.63 / np.sqrt(N_DRAWS)

    def test_positive(self):
        x = sample_site(GammaLaw(theta=1.0, m=0.5), RandomStream(1, 1), size=5000)
        assert np.all(x > 0)


class TestInvariantState:
    def test_mean_energy(self):
        law = GammaLaw(theta=1.0, m=2.0)
        st = sample_invariant_state(64, law, RandomStream(11, 0))
        # variance of the site mean is m theta^2/2 / N = 1/64
        assert abs(st.energies.mean() - 1.0) <= 3.0 / np.sqrt(64)
        assert st.time == 0.0

    def test_small_theta_concentrates_at_zero(self):
        law = GammaLaw(theta=1e-8, m=2.0)
        st = sample_invariant_state(3, law, RandomStream(0, 0))
        assert np.all(st.energies < 1e-5)

    def test_needs_three_sites(self):
        with pytest.raises(ValidationError):
            sample_invariant_state(2, GammaLaw(1.0, 1.0), RandomStream(0, 0))


class TestDeterminism:
    def test_equal_streams_are_byte_identical(self):
        law = GammaLaw(theta=1.3, m=1.7)
        a = sample_site(law, RandomStream(5, 9), size=4096)
        b = sample_site(law, RandomStream(5, 9), size=4096)
        assert a.tobytes() == b.tobytes()

    def test_distinct_streams_differ(self):
        law = GammaLaw(theta=1.0, m=2.0)
        a = sample_site(law, RandomStream(5, 0), size=64)
        b = sample_site(law, RandomStream(5, 1), size=64)
        assert not np.array_equal(a, b)

    def test_spawn(self):
        r = RandomStream(123, 0)
        assert np.array_equal(r.spawn(7).normals(8), RandomStream(123, 7).normals(8))


class TestMgf:
    def test_at_zero(self):
        assert single_site_mgf(GammaLaw(1.0, 3.3), 0.0) == 1.0

    def test_closed_form(self):
        assert single_site_mgf(GammaLaw(1.0, 2.0), 0.5) == pytest.approx(2.0, rel=0)

    def test_divergence_boundary(self):
        with pytest.raises(ValidationError):
            single_site_mgf(GammaLaw(1.0, 2.0), 1.0)
        with pytest.raises(ValidationError):
            single_site_mgf(GammaLaw(0.5, 2.0), 3.0)

    def test_derivative_at_zero_is_mean(self):
        law = GammaLaw(theta=0.8, m=2.6)
        h = 1e-6
        deriv = (single_site_mgf(law, h) - single_site_mgf(law, -h)) / (2 * h)
        assert deriv == pytest.approx(law.mean, rel=1e-6)
