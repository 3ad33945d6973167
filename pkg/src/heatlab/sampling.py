"""Invariant-measure sampling and the reproducible random-stream contract.

Stream contract
---------------
A `RandomStream` is the pair (seed, stream_id) feeding a PCG64 generator
through `numpy.random.SeedSequence((seed, stream_id))`.  Equal pairs produce
byte-identical sequences; distinct stream_ids give statistically independent
streams (SeedSequence spawning guarantees).  Ensemble member k always runs on
stream_id = k, so any single trajectory can be re-run in isolation.

Gamma sampling
--------------
Site energies are Gamma(shape = m/2, scale = theta) distributed.  Because the
shape can be below 1 (any m < 2), draws use the Marsaglia-Tsang squeeze
method for shape >= 1 plus the power-of-uniform boost for shape < 1,
implemented here on top of the raw uniform/normal streams so the algorithm is
fixed by this package rather than by the numpy release.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from heatlab.core import EnergyState
from heatlab.errors import ValidationError


@dataclass
class RandomStream:
    """Deterministic, splittable random source: one stream per trajectory."""

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((int(self.seed), int(self.stream_id))))
        )

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def spawn(self, stream_id: int) -> "RandomStream":
        """Sibling stream with the same seed and a different id."""
        return RandomStream(self.seed, stream_id)

    # thin wrappers so simulation code reads naturally
    def normals(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniforms(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def exponentials(self, rate: float, size=None) -> np.ndarray:
        # inverse transform on (0, 1]; avoids log(0)
        return -np.log1p(-self._gen.random(size)) / rate

    def integers(self, high: int, size=None) -> np.ndarray:
        return self._gen.integers(0, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


@dataclass(frozen=True)
class GammaLaw:
    """Single-site invariant law: density z^(m/2-1) e^(-z/theta) / (theta^(m/2) Gamma(m/2)).

    Mean m*theta/2, variance m*theta^2/2.
    """

    theta: float
    m: float

    def __post_init__(self):
        if not (self.theta > 0 and math.isfinite(self.theta)):
            raise ValidationError("theta must be positive")
        if not (self.m > 0 and math.isfinite(self.m)):
            raise ValidationError("m must be positive")

    @property
    def shape(self) -> float:
        return self.m / 2.0

    @property
    def mean(self) -> float:
        return self.m * self.theta / 2.0

    @property
    def variance(self) -> float:
        return self.m * self.theta ** 2 / 2.0


def _gamma_draws(shape: float, rng: RandomStream, n: int) -> np.ndarray:
    """Unit-scale Gamma(shape) via Marsaglia-Tsang (+ boost for shape < 1)."""
    boost = shape < 1.0
    k = shape + 1.0 if boost else shape
    d = k - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)

    out = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        x = rng.normals(todo.size)
        v = (1.0 + c * x) ** 3
        u = rng.uniforms(todo.size)
        pos = v > 0.0
        vsafe = np.where(pos, v, 1.0)
        squeeze = u < 1.0 - 0.0331 * x ** 4
        slow = np.log(u) < 0.5 * x * x + d * (1.0 - vsafe + np.log(vsafe))
        accept = pos & (squeeze | slow)
        out[todo[accept]] = d * v[accept]
        todo = todo[~accept]
    if boost:
        out *= rng.uniforms(n) ** (1.0 / shape)
    return out


def sample_site(law: GammaLaw, rng: RandomStream, size: int | None = None):
    """Draw site energies from the invariant single-site law."""
    n = 1 if size is None else int(size)
    draws = law.theta * _gamma_draws(law.shape, rng, n)
    return float(draws[0]) if size is None else draws


def sample_invariant_state(n_sites: int, law: GammaLaw, rng: RandomStream) -> EnergyState:
    """Product-measure sample: N independent site draws, time stamp 0."""
    if n_sites < 3:
        raise ValidationError("need N >= 3 sites")
    return EnergyState(sample_site(law, rng, size=n_sites), time=0.0)


def single_site_mgf(law: GammaLaw, phi: float) -> float:
    """E[exp(phi * z)] = (1 - theta*phi)^(-m/2); diverges for phi >= 1/theta."""
    if phi >= 1.0 / law.theta:
        raise ValidationError(f"mgf integral diverges: phi = {phi} >= 1/theta = {1.0 / law.theta}")
    return (1.0 - law.theta * phi) ** (-law.m / 2.0)
