import numpy as np
import pytest

from heatlab.core import DensityField, torus_grid

LAM = 2.0 * np.pi ** 2


def single_mode_field(nx: int, nt: int, t_end: float = 0.1, beta: float = 0.3,
                      lam: float = LAM) -> DensityField:
    """1 + beta e^{-lam t} cos(2 pi x), sampled analytically on the grid.

    Not a solution of the m = 1 heat equation (that would need lam = 4 pi^2),
    so it has a nonzero hydrodynamic residual: the standard rate-functional
    benchmark."""
    xs = torus_grid(nx)
    times = np.linspace(0.0, t_end, nt)
    vals = 1.0 + beta * np.exp(-lam * times)[:, None] * np.cos(2 * np.pi * xs)[None, :]
    return DensityField(times, xs, vals)


def cos_profile(x):
    return 1.0 + 0.5 * np.cos(2 * np.pi * x)


@pytest.fixture
def rng_factory():
    from heatlab.sampling import RandomStream

    def make(seed=1234, stream=0):
        return RandomStream(seed, stream)

    return make
