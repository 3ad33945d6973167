"""Lattice states, empirical measures, continuum fields and model specifications.

Conventions used everywhere in the package:

* the lattice has N >= 3 sites on the unit torus, site i (0-based) sits at
  x = (i+1)/N, bond i joins sites i and i+1 (mod N);
* continuum fields live on the uniform grid x_j = j/nx, j = 0..nx-1, with the
  point x = 1 identified with x = 0;
* the quadrature for every spatial integral is the trapezoid rule, which on a
  uniform periodic grid reduces to dx * sum(values) = mean(values).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, TYPE_CHECKING

import numpy as np

from heatlab.errors import ValidationError

if TYPE_CHECKING:  # pragma: no cover
    from heatlab.dynamics import BondNoiseLog

# Relative tolerance for "exact" conservation of the total energy along paths.
MASS_RTOL = 1e-10
# Gauge tolerance for tilt fields (per-level spatial mean).
TILT_GAUGE_TOL = 1e-12


def site_positions(n_sites: int) -> np.ndarray:
    """Torus positions of the lattice sites: (i+1)/N for i = 0..N-1."""
    return (np.arange(n_sites) + 1.0) / n_sites


def torus_grid(nx: int) -> np.ndarray:
    """Uniform periodic grid x_j = j/nx, j = 0..nx-1."""
    return np.arange(nx) / nx


def torus_integral(values: np.ndarray, axis: int = -1) -> np.ndarray | float:
    """Trapezoid-rule integral over the unit torus (equals the mean)."""
    return np.asarray(values, dtype=float).mean(axis=axis)


def _as_float_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be finite")
    return arr


# ---------------------------------------------------------------------------
# Lattice states
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyState:
    """Vector of non-negative site energies on the periodic lattice.

    The `time` stamp is macroscopic time: all simulators run the
    N^2-accelerated generator, so a state at time t corresponds to N^2 t units
    of microscopic time.
    """

    energies: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        arr = _as_float_array(self.energies, "energies")
        if arr.ndim != 1 or arr.size < 3:
            raise ValidationError("EnergyState needs a 1-d energy vector with N >= 3 "
                                  "(with N = 2 the periodic bond set degenerates)")
        if np.any(arr < 0.0):
            raise ValidationError("site energies must be non-negative")
        if self.time < 0.0:
            raise ValidationError("time must be non-negative")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "energies", arr)

    @property
    def n_sites(self) -> int:
        return self.energies.size

    @property
    def positions(self) -> np.ndarray:
        return site_positions(self.n_sites)

    def total_energy(self) -> float:
        return float(self.energies.sum())


@dataclass(frozen=True)
class MomentumState:
    """N x m array of momenta; site energies are the row-wise squared norms."""

    momenta: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        arr = _as_float_array(self.momenta, "momenta")
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 3 or arr.shape[1] < 1:
            raise ValidationError("MomentumState needs an N x m momentum array with N >= 3, m >= 1")
        if self.time < 0.0:
            raise ValidationError("time must be non-negative")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "momenta", arr)

    @property
    def n_sites(self) -> int:
        return self.momenta.shape[0]

    @property
    def layers(self) -> int:
        return self.momenta.shape[1]


def momentum_to_energy(state: MomentumState) -> EnergyState:
    """Site energies z_i = sum_j (p_i^j)^2, keeping the time stamp."""
    return EnergyState((state.momenta ** 2).sum(axis=1), time=state.time)


# ---------------------------------------------------------------------------
# Model specification
# ---------------------------------------------------------------------------

_KINDS = ("bep", "gbep", "kmp")


class ConstRate:
    """a(rho) = c; picklable preset usable by the compiled steppers."""

    def __init__(self, c: float):
        if not c > 0:
            raise ValidationError("constant rate must be positive")
        self.c = float(c)

    def __call__(self, rho):
        return np.full_like(np.asarray(rho, dtype=float), self.c)


class SqrtRate:
    """a(rho) = sqrt(rho); degenerates at rho = 0."""

    def __call__(self, rho):
        return np.sqrt(np.asarray(rho, dtype=float))


class LinearRate:
    """a(rho) = c * rho."""

    def __init__(self, c: float):
        if not c > 0:
            raise ValidationError("linear rate slope must be positive")
        self.c = float(c)

    def __call__(self, rho):
        return self.c * np.asarray(rho, dtype=float)


@dataclass(frozen=True)
class ModelSpec:
    """Which process, plus the transport coefficients it induces.

    kind       one of "bep", "gbep", "kmp"
    m          drift parameter of BEP(m); any positive real
    a          bond-rate function of GBEP(a); positive and continuous
    a_label    short provenance label for `a` ("sqrt", "const:2", ...)

    Derived per-kind quantities:

        diffusivity D(rho)      bep: m          gbep: a(rho)^2          kmp: 1
        mobility    chi(rho)    bep: rho^2      gbep: rho^2 a(rho)^2    kmp: rho^2
        entropy weight gamma    bep: m/4        gbep: 1/4               kmp: 1/2
        onsager mobility alpha  bep: 4 rho^2    gbep: 4 rho^2 a(rho)^2  kmp: 2 rho^2
        rate prefactor c_I      bep: 1/8        gbep: 1/8               kmp: 1/4

    Note alpha(rho) = lambda * chi(rho) with lambda = 4 (bep, gbep) or 2 (kmp),
    and c_I = 1/(2*lambda); this proportionality is what makes the two
    pathwise-rate routes agree identically on a common grid.
    """

    kind: str
    m: float = 1.0
    a: Callable[[np.ndarray], np.ndarray] | None = None
    a_label: str = ""

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValidationError(f"unknown model kind {self.kind!r}; expected one of {_KINDS}")
        if self.kind == "bep":
            if not (self.m > 0 and math.isfinite(self.m)):
                raise ValidationError("BEP requires m > 0")
        if self.kind == "gbep":
            if self.a is None:
                raise ValidationError("GBEP requires a rate function a(rho)")
        elif self.a is not None:
            raise ValidationError(f"rate function a only applies to GBEP, not {self.kind}")

    # -- constructors ------------------------------------------------------

    @classmethod
    def bep(cls, m: float = 1.0) -> "ModelSpec":
        return cls(kind="bep", m=float(m))

    @classmethod
    def gbep(cls, a: Callable[[np.ndarray], np.ndarray], label: str = "") -> "ModelSpec":
        return cls(kind="gbep", a=a, a_label=label)

    @classmethod
    def kmp(cls) -> "ModelSpec":
        return cls(kind="kmp")

    # -- derived coefficients ------------------------------------------------

    def a_values(self, rho: np.ndarray) -> np.ndarray:
        assert self.a is not None
        vals = np.asarray(self.a(np.asarray(rho, dtype=float)), dtype=float)
        vals = np.broadcast_to(vals, np.shape(rho)).copy() if vals.shape != np.shape(rho) else vals
        # a may vanish where rho does (degenerate diffusion); negatives are invalid
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValidationError("rate function a(rho) must be non-negative and finite")
        return vals

    def diffusivity(self, rho: np.ndarray) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        if self.kind == "bep":
            return np.full_like(rho, self.m)
        if self.kind == "kmp":
            return np.ones_like(rho)
        return self.a_values(rho) ** 2

    def mobility(self, rho: np.ndarray) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        chi = rho ** 2
        if self.kind == "gbep":
            chi = chi * self.a_values(rho) ** 2
        return chi

    @property
    def onsager_gamma(self) -> float:
        return {"bep": self.m / 4.0, "gbep": 0.25, "kmp": 0.5}[self.kind]

    def onsager_mobility(self, rho: np.ndarray) -> np.ndarray:
        return self.mobility_ratio * self.mobility(rho)

    @property
    def mobility_ratio(self) -> float:
        """lambda = alpha(rho)/chi(rho), an exact power of two for every kind."""
        return 2.0 if self.kind == "kmp" else 4.0

    @property
    def rate_prefactor(self) -> float:
        return 0.25 if self.kind == "kmp" else 0.125

    def label(self) -> str:
        if self.kind == "bep":
            return f"bep(m={self.m:g})"
        if self.kind == "gbep":
            return f"gbep(a={self.a_label or 'custom'})"
        return "kmp"


# ---------------------------------------------------------------------------
# Empirical measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Atomic measure (1/N) sum_i z_i delta_{x_i} on the torus."""

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pos = _as_float_array(self.positions, "positions")
        w = _as_float_array(self.weights, "weights")
        if pos.shape != w.shape or pos.ndim != 1:
            raise ValidationError("positions and weights must be matching 1-d arrays")
        if np.any(w < 0):
            raise ValidationError("atom weights must be non-negative")
        pos = pos.copy(); pos.setflags(write=False)
        w = w.copy(); w.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "weights", w)

    def pair_with(self, phi: Callable[[np.ndarray], np.ndarray] | np.ndarray) -> float:
        """<mu, phi>, evaluating phi exactly at the atom locations."""
        vals = phi(self.positions) if callable(phi) else np.asarray(phi, dtype=float)
        if np.shape(vals) == ():
            vals = np.full_like(self.weights, float(vals))
        return float(np.dot(self.weights, vals))

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())


class PairEmpiricalMeasure(EmpiricalMeasure):
    """Same layout, with weights z_i z_{i+1} / N (periodic neighbour products)."""


def empirical_measure(state: EnergyState) -> EmpiricalMeasure:
    """Empirical energy measure: atom at site i's position with weight z_i/N."""
    return EmpiricalMeasure(state.positions, state.energies / state.n_sites)


def pair_empirical_measure(state: EnergyState) -> PairEmpiricalMeasure:
    """Neighbour-product measure: weight z_i z_{i+1} / N at site i's position."""
    z = state.energies
    return PairEmpiricalMeasure(state.positions, z * np.roll(z, -1) / state.n_sites)


# ---------------------------------------------------------------------------
# Space-time fields
# ---------------------------------------------------------------------------


def _check_grid(times: np.ndarray, xs: np.ndarray, values: np.ndarray):
    if times.ndim != 1 or xs.ndim != 1:
        raise ValidationError("times and xs must be 1-d")
    if values.shape != (times.size, xs.size):
        raise ValidationError(f"values shape {values.shape} does not match grid "
                              f"({times.size} times x {xs.size} points)")
    if times.size < 2 or xs.size < 3:
        raise ValidationError("need at least 2 time levels and 3 spatial points")
    dts = np.diff(times)
    if np.any(dts <= 0):
        raise ValidationError("times must be strictly increasing")
    if not np.allclose(dts, dts[0], rtol=1e-8, atol=1e-14):
        raise ValidationError("time levels must be uniform")
    if not np.allclose(xs, torus_grid(xs.size), rtol=0, atol=1e-12):
        raise ValidationError("spatial grid must be the uniform torus grid j/nx")


@dataclass(frozen=True)
class _GridField:
    times: np.ndarray
    xs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = _as_float_array(self.times, "times")
        xs = _as_float_array(self.xs, "xs")
        values = _as_float_array(self.values, "values")
        _check_grid(times, xs, values)
        for name, arr in (("times", times), ("xs", xs), ("values", values)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def nx(self) -> int:
        return self.xs.size

    @property
    def nt(self) -> int:
        return self.times.size

    @property
    def dx(self) -> float:
        return 1.0 / self.nx

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def covers(self, t0: float, t1: float, slack: float = 1e-12) -> bool:
        pad = slack * max(1.0, abs(self.t_end))
        return self.times[0] - pad <= t0 and t1 <= self.times[-1] + pad

    def value_at(self, t: float, x: np.ndarray) -> np.ndarray:
        """Bilinear interpolation in (t, x), periodic in x."""
        if not self.covers(t, t):
            raise ValidationError(f"time {t} outside field range [{self.t0}, {self.t_end}]")
        # time bracket
        s = (t - self.t0) / self.dt
        k = int(np.clip(np.floor(s), 0, self.nt - 2))
        ft = s - k
        row = (1.0 - ft) * self.values[k] + ft * self.values[k + 1]
        # periodic linear interpolation in x
        x = np.asarray(x, dtype=float) % 1.0
        u = x * self.nx
        j = np.floor(u).astype(int) % self.nx
        fx = u - np.floor(u)
        return (1.0 - fx) * row[j] + fx * row[(j + 1) % self.nx]

    def mass(self) -> np.ndarray:
        """Spatial trapezoid integral per time level."""
        return self.values.mean(axis=1)


class DensityField(_GridField):
    """rho(t, x) >= 0 on a uniform periodic space-time grid."""

    def __post_init__(self):
        super().__post_init__()
        if np.any(self.values < 0):
            raise ValidationError("density values must be non-negative")

    def mass_drift(self) -> float:
        """Max relative deviation of the spatial integral from its initial value."""
        masses = self.mass()
        scale = max(abs(masses[0]), 1e-300)
        return float(np.max(np.abs(masses - masses[0])) / scale)


class TiltField(_GridField):
    """Smooth tilt H(t, x), gauge-fixed to zero spatial mean at each level."""

    def __post_init__(self):
        super().__post_init__()
        means = self.values.mean(axis=1)
        scale = max(1.0, float(np.max(np.abs(self.values))))
        if np.max(np.abs(means)) > TILT_GAUGE_TOL * scale:
            raise ValidationError("tilt field must have zero spatial mean at every time level "
                                  "(use TiltField.gauge_fixed to project)")

    @classmethod
    def gauge_fixed(cls, times, xs, values) -> "TiltField":
        values = np.asarray(values, dtype=float)
        return cls(times, xs, values - values.mean(axis=1, keepdims=True))

    def bond_differences(self, t: float, n_sites: int) -> np.ndarray:
        """E_i = H(x_{i+1}) - H(x_i) at the lattice sites, by interpolation at time t.

        Exact site differences (not dx * dH/dx) so the discrete telescoping
        identities of the tilted generator hold exactly; their sum vanishes by
        periodicity.
        """
        h_sites = self.value_at(t, site_positions(n_sites))
        return np.roll(h_sites, -1) - h_sites


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrajectoryRecord:
    """Time series of lattice snapshots from one simulated path.

    `energies` holds the raw site energies at each sample time (row k at
    times[k]); empirical measures are derived views.  `tilt` records the field
    the path was simulated under (None for the untilted process), which also
    fixes the generating measure for Girsanov reweighting.
    """

    model: ModelSpec | str
    times: np.ndarray
    energies: np.ndarray
    tilt: TiltField | None = None
    noise_log: "BondNoiseLog | None" = None
    truncated_mass: float = 0.0
    relocated_deficit: float = 0.0

    def __post_init__(self):
        times = _as_float_array(self.times, "times")
        energies = _as_float_array(self.energies, "energies")
        if isinstance(self.model, str) and self.model != "bmp":
            raise ValidationError("string model must be 'bmp'")
        if times.ndim != 1 or np.any(np.diff(times) <= 0):
            raise ValidationError("sample times must be strictly increasing")
        if energies.shape[0] != times.size or energies.ndim != 2:
            raise ValidationError("energies must be (n_snapshots, n_sites)")
        totals = energies.sum(axis=1)
        scale = max(abs(totals[0]), 1e-300)
        if np.max(np.abs(totals - totals[0])) > MASS_RTOL * scale:
            raise ValidationError("snapshot energy sums differ beyond the conservation tolerance")
        times = times.copy(); times.setflags(write=False)
        energies = energies.copy(); energies.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "energies", energies)

    @property
    def n_sites(self) -> int:
        return self.energies.shape[1]

    @property
    def n_snapshots(self) -> int:
        return self.times.size

    def state(self, k: int) -> EnergyState:
        return EnergyState(self.energies[k], time=float(self.times[k]))

    def empirical(self, k: int) -> EmpiricalMeasure:
        return empirical_measure(self.state(k))

    def snapshots(self) -> list[EmpiricalMeasure]:
        return [self.empirical(k) for k in range(self.n_snapshots)]

    def pair_weights(self, k: int) -> np.ndarray:
        z = self.energies[k]
        return z * np.roll(z, -1) / self.n_sites


# ---------------------------------------------------------------------------
# CSV serialization (full schemas in docs/formats.md)
# ---------------------------------------------------------------------------

FLOAT_FMT = "%.17g"


def _fmt(x: float) -> str:
    return FLOAT_FMT % x


def write_state_csv(state: EnergyState, path, comments: Sequence[str] = ()):
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["i", "z"])
        for i, z in enumerate(state.energies):
            writer.writerow([i, _fmt(z)])


def read_state_csv(path, time: float = 0.0) -> EnergyState:
    rows = _read_csv_rows(path, expected=["i", "z"])
    z = np.empty(len(rows))
    for row in rows:
        z[int(row[0])] = float(row[1])
    return EnergyState(z, time=time)


def write_field_csv(fieldobj: _GridField, path, value_name: str = "value",
                    comments: Sequence[str] = ()):
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["t", "x", value_name])
        for k, t in enumerate(fieldobj.times):
            for j, x in enumerate(fieldobj.xs):
                writer.writerow([_fmt(t), _fmt(x), _fmt(fieldobj.values[k, j])])


def read_field_csv(path, kind: str = "density") -> _GridField:
    """Read a `t,x,<value>` CSV into a DensityField or TiltField."""
    rows = _read_csv_rows(path, n_columns=3)
    ts = np.array([float(r[0]) for r in rows])
    xs = np.array([float(r[1]) for r in rows])
    vals = np.array([float(r[2]) for r in rows])
    times = np.unique(ts)
    grid_x = np.unique(xs)
    if times.size * grid_x.size != len(rows):
        raise ValidationError(f"{path}: rows do not form a complete (t, x) grid")
    values = np.empty((times.size, grid_x.size))
    ti = np.searchsorted(times, ts)
    xi = np.searchsorted(grid_x, xs)
    values[ti, xi] = vals
    cls = {"density": DensityField, "tilt": TiltField}.get(kind)
    if cls is None:
        raise ValidationError(f"unknown field kind {kind!r}")
    return cls(times, grid_x, values)


def write_trajectory_csv(record: TrajectoryRecord, path, comments: Sequence[str] = ()):
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["snapshot", "t", "i", "z"])
        for k, t in enumerate(record.times):
            for i, z in enumerate(record.energies[k]):
                writer.writerow([k, _fmt(t), i, _fmt(z)])


def read_trajectory_csv(path, model: ModelSpec | str = "bep") -> TrajectoryRecord:
    rows = _read_csv_rows(path, expected=["snapshot", "t", "i", "z"])
    snaps = sorted({int(r[0]) for r in rows})
    sites = sorted({int(r[2]) for r in rows})
    times = np.empty(len(snaps))
    energies = np.empty((len(snaps), len(sites)))
    for r in rows:
        k, i = int(r[0]), int(r[2])
        times[k] = float(r[1])
        energies[k, i] = float(r[3])
    if isinstance(model, str) and model not in ("bmp",):
        model = ModelSpec.bep(1.0) if model == "bep" else ModelSpec(model)
    return TrajectoryRecord(model=model, times=times, energies=energies)


def read_csv_comments(path) -> dict[str, str]:
    """Parse leading `# key=value` comment lines of a CSV artifact."""
    meta: dict[str, str] = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if "=" in body:
                key, _, val = body.partition("=")
                meta[key.strip()] = val.strip()
    return meta


def _read_csv_rows(path, expected: list[str] | None = None,
                   n_columns: int | None = None) -> list[list[str]]:
    with open(path, newline="") as fh:
        raw = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(raw)
    try:
        header = next(reader)
    except StopIteration:
        raise ValidationError(f"{path}: empty CSV") from None
    header = [h.strip() for h in header]
    if expected is not None and header != expected:
        raise ValidationError(f"{path}: expected header {expected}, found {header}")
    if n_columns is not None and len(header) != n_columns:
        raise ValidationError(f"{path}: expected {n_columns} columns, found {len(header)}")
    rows = [row for row in reader if row]
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return rows
