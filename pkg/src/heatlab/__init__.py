"""Simulation and analysis lab for stochastic heat-conduction lattice processes.

Energy-exchange processes on a periodic 1-d lattice (BEP(m), GBEP(a), KMP and
the momentum process behind BEP(1)), their deterministic heat-equation limits,
and the equilibrium / pathwise large-deviation machinery that ties the two
levels together: rate functionals, tilt recovery, Onsager operators, Girsanov
path weights.
"""

from heatlab.core import (
    DensityField,
    EmpiricalMeasure,
    EnergyState,
    ModelSpec,
    MomentumState,
    PairEmpiricalMeasure,
    TiltField,
    TrajectoryRecord,
    empirical_measure,
    momentum_to_energy,
    pair_empirical_measure,
)
from heatlab.errors import HeatLabError, NumericalError, ValidationError
from heatlab.sampling import GammaLaw, RandomStream, sample_invariant_state, sample_site, single_site_mgf

__all__ = [
    "DensityField",
    "EmpiricalMeasure",
    "EnergyState",
    "GammaLaw",
    "HeatLabError",
    "ModelSpec",
    "MomentumState",
    "NumericalError",
    "PairEmpiricalMeasure",
    "RandomStream",
    "TiltField",
    "TrajectoryRecord",
    "ValidationError",
    "empirical_measure",
    "momentum_to_energy",
    "pair_empirical_measure",
    "sample_invariant_state",
    "sample_site",
    "single_site_mgf",
]

__version__ = "0.1.0"
