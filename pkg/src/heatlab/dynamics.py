"""Time-stepping simulators for the lattice energy processes.

All simulators run the N^2-accelerated clock: one unit of trajectory time is
N^2 units of microscopic time.  Updates are organised per bond so the
telescoping of bond fluxes conserves the total energy exactly (to roundoff):

* BEP(m)/GBEP(a)/WABEP: Euler-Maruyama with per-bond flux increments
      dJ_i = 2 a_i sqrt(z_i^+ z_{i+1}^+) N dB_i
             + a_i^2 m_eff (z_{i+1} - z_i) N^2 dt  [- N^2 E_i z_i z_{i+1} dt]
  and z_i <- z_i + dJ_i - dJ_{i-1}.
* BMP: exact pairwise rotations of (p_i, p_{i+1}) by Normal(0, N^2 dt) angles,
  applied in a fresh random bond order each step.
* KMP: exact event-driven (Gillespie) simulation, total rate 2 N^3.

Positivity for the diffusions uses full truncation: energies are clipped at
zero inside the square-root noise amplitude, and post-step negative excursions
are repaired by zeroing the site and charging the deficit half to each
neighbour (in site order, repeated until clean), which moves energy locally
but never creates or destroys it.  The moved amount is logged per trajectory
as `relocated_deficit`; mass a repair had to take non-locally, which does not
occur under the stability bound, would be logged as `truncated_mass`.

The adaptive step is dt = c_safe / (N^2 (D_max + max_i z_i (1 + max_i |E_i|)))
with c_safe = 0.1 by default, recomputed every step.

The step arithmetic lives in small kernels compiled with numba when it is
available (pure-python fallback otherwise, same code); simulation and replay
share these kernels, so replaying a noise log reproduces a trajectory
bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from heatlab.core import (
    ConstRate,
    EnergyState,
    LinearRate,
    ModelSpec,
    MomentumState,
    SqrtRate,
    TiltField,
    TrajectoryRecord,
    momentum_to_energy,
    site_positions,
)
from heatlab.errors import ValidationError
from heatlab.sampling import RandomStream

try:  # pragma: no cover - exercised implicitly
    from numba import njit as _njit

    def _jit(fn):
        return _njit(cache=True)(fn)
except ImportError:  # pragma: no cover
    def _jit(fn):
        return fn

C_SAFE_DEFAULT = 0.1
_KMP_CHUNK = 4096
_DT_SLACK = 1.0 + 1e-9
# deficit repair spreads half to each neighbour per pass, i.e. by a random
# walk; clusters of near-zero sites (degenerate GBEP rates) can need many
# passes before the deficit finds positive mass
_REPAIR_PASSES = 4000


# ---------------------------------------------------------------------------
# Compiled kernels
# ---------------------------------------------------------------------------


@_jit
def _diffusion_kernel(z, n2dt, two_n, db, has_noise, drift, noisec, tilt_e, has_tilt,
                      flux):
    """One bond-flux Euler step plus positivity repair, in place.

    Returns (relocated, truncated, z_max).  `drift`, `noisec`, `tilt_e` are
    per-bond arrays; `db` per-bond Brownian increments (ignored when
    has_noise is False); `flux` is an n-sized scratch buffer.
    """
    n = z.shape[0]
    for i in range(n):
        ip1 = i + 1 if i + 1 < n else 0
        zi = z[i]
        zj = z[ip1]
        f = drift[i] * (zj - zi) * n2dt
        if has_noise:
            zip_ = zi if zi > 0.0 else 0.0
            zjp = zj if zj > 0.0 else 0.0
            f = f + two_n * noisec[i] * math.sqrt(zip_ * zjp) * db[i]
        if has_tilt:
            f = f - n2dt * tilt_e[i] * zi * zj
        flux[i] = f
    prev = flux[n - 1]
    for i in range(n):
        f = flux[i]
        z[i] = z[i] + f - prev
        prev = f

    # positivity repair: zero each negative site, charge half to each neighbour
    relocated = 0.0
    truncated = 0.0
    for _ in range(_REPAIR_PASSES):
        clean = True
        for i in range(n):
            if z[i] < 0.0:
                clean = False
                d = -z[i]
                relocated += d
                z[i] = 0.0
                z[i - 1 if i > 0 else n - 1] -= 0.5 * d
                z[i + 1 if i + 1 < n else 0] -= 0.5 * d
        if clean:
            break
    if not clean:
        # non-local fallback: clear the residue against the largest site
        imax = 0
        for i in range(1, n):
            if z[i] > z[imax]:
                imax = i
        for i in range(n):
            if z[i] < 0.0:
                truncated += -z[i]
                z[i] = 0.0
        z[imax] -= truncated

    z_max = z[0]
    for i in range(1, n):
        if z[i] > z_max:
            z_max = z[i]
    return relocated, truncated, z_max


@_jit
def _diffusion_segment(z, t_start, ts, eps, n, c_safe, drift, noisec, d_max,
                       a_code, a_param,
                       raw_chunk, start_row, use_noise,
                       e_levels, tilt_t0, tilt_dt, e_max, has_tilt,
                       out_ts, out_dts, db_buf, tilt_buf, flux_buf):
    """Run adaptive steps from t_start toward ts until the noise chunk runs out.

    Consumes raw_chunk rows in order starting at start_row (each row scaled by
    sqrt(dt) becomes the step's Brownian increments), so the consumed value
    stream is identical to per-step draws.  a_code selects a compiled bond
    rate: 0 uses the fixed drift/noisec arrays (BEP), 1/2/3 recompute them
    per step as const/sqrt/linear GBEP rates a((z_i + z_{i+1})/2).  Writes the
    step start times and dts; returns (t, steps, relocated, truncated).
    """
    t = t_start
    row = start_row
    steps = 0
    relocated = 0.0
    truncated = 0.0
    z_max = z[0]
    for i in range(1, n):
        if z[i] > z_max:
            z_max = z[i]
    while ts - t > eps:
        if row >= raw_chunk.shape[0]:
            break
        if a_code != 0:
            d_max = 0.0
            for j in range(n):
                jp1 = j + 1 if j + 1 < n else 0
                mid = 0.5 * (z[j] + z[jp1])
                if a_code == 1:
                    a = a_param
                elif a_code == 2:
                    a = math.sqrt(mid)
                else:
                    a = a_param * mid
                noisec[j] = a
                drift[j] = a * a
                if drift[j] > d_max:
                    d_max = drift[j]
        rate = n * n * (d_max + z_max * (1.0 + e_max))
        dt = c_safe / rate
        rem = ts - t
        if dt > rem:
            dt = rem
        if has_tilt:
            s = (t - tilt_t0) / tilt_dt
            k = int(s)
            kmax = e_levels.shape[0] - 2
            if k < 0:
                k = 0
            elif k > kmax:
                k = kmax
            ft = s - k
            for j in range(n):
                tilt_buf[j] = (1.0 - ft) * e_levels[k, j] + ft * e_levels[k + 1, j]
        sq = math.sqrt(dt)
        if use_noise:
            for j in range(n):
                db_buf[j] = raw_chunk[row, j] * sq
        moved, lost, z_max = _diffusion_kernel(z, n * n * dt, 2.0 * n,
                                               db_buf, use_noise,
                                               drift, noisec, tilt_buf, has_tilt,
                                               flux_buf)
        relocated += moved
        truncated += lost
        out_ts[steps] = t
        out_dts[steps] = dt
        t = t + dt
        row += 1
        steps += 1
    return t, steps, relocated, truncated


@_jit
def _bmp_kernel(p, order, angles):
    """Pair rotations in the given bond order, in place; conserves pair energies."""
    n = p.shape[0]
    for k in range(order.shape[0]):
        b = order[k]
        j = b + 1 if b + 1 < n else 0
        c = math.cos(angles[b])
        s = math.sin(angles[b])
        pi = p[b]
        pj = p[j]
        p[b] = c * pi + s * pj
        p[j] = -s * pi + c * pj


@_jit
def _kmp_kernel(z, t, t_end, waits, bonds, fracs, out_times, out_bonds, out_fracs):
    """Consume pre-drawn (wait, bond, s) triples until t_end; returns (t, used, done)."""
    n = z.shape[0]
    used = 0
    for k in range(waits.shape[0]):
        w = waits[k]
        if t + w > t_end:
            return t, used, True
        t = t + w
        b = bonds[k]
        j = b + 1 if b + 1 < n else 0
        total = z[b] + z[j]
        zb = fracs[k] * total
        z[b] = zb
        z[j] = total - zb
        out_times[used] = t
        out_bonds[used] = b
        out_fracs[used] = fracs[k]
        used += 1
    return t, used, False


# ---------------------------------------------------------------------------
# Noise logs
# ---------------------------------------------------------------------------

_LOG_MAGIC = b"HLNL"
_LOG_DTYPE = np.dtype([("bond", "<u4"), ("t", "<f8"), ("value", "<f8")])
_STEP_MARKER = np.uint32(0xFFFFFFFF)


@dataclass(frozen=True)
class BondNoiseLog:
    """Per-bond noise record sufficient to replay a trajectory exactly.

    kind "diffusion": one row of Brownian increments per step, plus the step
    start time and the adaptive dt actually used.
    kind "kmp": the (time, bond, uniform fraction) event list.
    """

    kind: str
    n_sites: int
    step_times: np.ndarray | None = None
    step_dts: np.ndarray | None = None
    increments: np.ndarray | None = None
    event_times: np.ndarray | None = None
    bonds: np.ndarray | None = None
    fractions: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("diffusion", "kmp"):
            raise ValidationError("noise log kind must be 'diffusion' or 'kmp'")
        if self.kind == "diffusion":
            if self.step_times is None or self.step_dts is None or self.increments is None:
                raise ValidationError("diffusion log needs step_times, step_dts, increments")
            if self.increments.shape != (self.step_times.size, self.n_sites):
                raise ValidationError("increments must be (n_steps, n_sites)")
        else:
            if self.event_times is None or self.bonds is None or self.fractions is None:
                raise ValidationError("kmp log needs event_times, bonds, fractions")

    @property
    def n_steps(self) -> int:
        return self.step_times.size if self.kind == "diffusion" else self.event_times.size


def write_noise_log(log: BondNoiseLog, path):
    """Compact binary frames: little-endian [u32 bond | f64 t | f64 value].

    Diffusion logs group each step as a marker record (bond = 0xFFFFFFFF,
    value = dt) followed by the N per-bond increments; KMP logs are plain
    event records with value = the uniform fraction s.
    """
    if log.kind == "diffusion":
        n_steps = log.n_steps
        rows = np.empty((n_steps, log.n_sites + 1), dtype=_LOG_DTYPE)
        rows["bond"][:, 0] = _STEP_MARKER
        rows["bond"][:, 1:] = np.arange(log.n_sites, dtype=np.uint32)
        rows["t"][:, :] = log.step_times[:, None]
        rows["value"][:, 0] = log.step_dts
        rows["value"][:, 1:] = log.increments
        rows = rows.reshape(-1)
        kind_byte = 0
    else:
        rows = np.empty(log.n_steps, dtype=_LOG_DTYPE)
        rows["bond"] = log.bonds
        rows["t"] = log.event_times
        rows["value"] = log.fractions
        kind_byte = 1
    with open(path, "wb") as fh:
        fh.write(_LOG_MAGIC)
        fh.write(bytes([1, kind_byte]))
        fh.write(np.uint16(0).tobytes())
        fh.write(np.uint32(log.n_sites).tobytes())
        fh.write(np.uint64(rows.size).tobytes())
        rows.tofile(fh)


def read_noise_log(path) -> BondNoiseLog:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _LOG_MAGIC:
            raise ValidationError(f"{path}: not a noise log file")
        version, kind_byte = fh.read(1)[0], fh.read(1)[0]
        if version != 1:
            raise ValidationError(f"{path}: unsupported noise log version {version}")
        fh.read(2)
        n_sites = int(np.frombuffer(fh.read(4), dtype=np.uint32)[0])
        n_rows = int(np.frombuffer(fh.read(8), dtype=np.uint64)[0])
        rows = np.fromfile(fh, dtype=_LOG_DTYPE, count=n_rows)
    if rows.size != n_rows:
        raise ValidationError(f"{path}: truncated noise log")
    if kind_byte == 1:
        return BondNoiseLog(kind="kmp", n_sites=n_sites,
                            event_times=rows["t"].copy(),
                            bonds=rows["bond"].astype(np.int64),
                            fractions=rows["value"].copy())
    rows = rows.reshape(-1, n_sites + 1)
    if not np.all(rows["bond"][:, 0] == _STEP_MARKER):
        raise ValidationError(f"{path}: malformed diffusion log")
    return BondNoiseLog(kind="diffusion", n_sites=n_sites,
                        step_times=rows["t"][:, 0].copy(),
                        step_dts=rows["value"][:, 0].copy(),
                        increments=rows["value"][:, 1:].copy())


class _LogBuilder:
    def __init__(self, kind: str, n_sites: int):
        self.kind = kind
        self.n_sites = n_sites
        self.times: list = []
        self.values: list = []
        self.rows: list[np.ndarray] = []
        self.bonds: list = []

    def build(self) -> BondNoiseLog:
        if self.kind == "diffusion":
            return BondNoiseLog(
                kind="diffusion", n_sites=self.n_sites,
                step_times=np.array(self.times), step_dts=np.array(self.values),
                increments=(np.vstack(self.rows) if self.rows
                            else np.empty((0, self.n_sites))))
        return BondNoiseLog(
            kind="kmp", n_sites=self.n_sites,
            event_times=(np.concatenate(self.times) if self.times else np.empty(0)),
            bonds=(np.concatenate(self.bonds) if self.bonds
                   else np.empty(0, dtype=np.int64)),
            fractions=(np.concatenate(self.values) if self.values else np.empty(0)))


# ---------------------------------------------------------------------------
# Step-level helpers
# ---------------------------------------------------------------------------


def stable_dt(z_max: float, d_max: float, n: int, c_safe: float = C_SAFE_DEFAULT,
              tilt_e_max: float = 0.0) -> float:
    """Adaptive step bound: keeps one-step relative changes bounded, c_safe-scaled."""
    rate = n * n * (d_max + z_max * (1.0 + tilt_e_max))
    return c_safe / rate


class _TiltSampler:
    """Fast per-step E_i = H_{i+1} - H_i lookups: site values precomputed per level."""

    def __init__(self, tilt: TiltField, n_sites: int):
        self.tilt = tilt
        h_sites = np.empty((tilt.nt, n_sites))
        pos = site_positions(n_sites)
        for k in range(tilt.nt):
            h_sites[k] = tilt.value_at(float(tilt.times[k]), pos)
        self.e_levels = np.roll(h_sites, -1, axis=1) - h_sites
        self.e_max = float(np.max(np.abs(self.e_levels)))

    def at(self, t: float) -> np.ndarray:
        tilt = self.tilt
        s = (t - tilt.t0) / tilt.dt
        k = int(s)
        k = 0 if k < 0 else (tilt.nt - 2 if k > tilt.nt - 2 else k)
        ft = s - k
        return (1.0 - ft) * self.e_levels[k] + ft * self.e_levels[k + 1]


_EMPTY = np.empty(0)


def _apply_diffusion_step(z, n, dt, db, drift_arr, noise_arr, tilt_e):
    n2dt = float(n * n * dt)
    two_n = float(2 * n)
    has_noise = db is not None
    has_tilt = tilt_e is not None
    return _diffusion_kernel(z, n2dt, two_n,
                             db if has_noise else _EMPTY, has_noise,
                             drift_arr, noise_arr,
                             tilt_e if has_tilt else _EMPTY, has_tilt,
                             np.empty(n))


class _Coefs:
    """Per-model drift/noise bond coefficients, reusing buffers between steps.

    Preset GBEP rates carry a kernel code so the compiled stepper can
    recompute the bond coefficients itself; the python `update` produces
    bit-identical arrays (same operations in the same order), which exact
    replay relies on.
    """

    def __init__(self, model: ModelSpec, n: int):
        self.model = model
        self.a_code = 0
        self.a_param = 0.0
        if model.kind == "bep":
            self.drift = np.full(n, model.m)
            self.noise = np.ones(n)
            self.d_max = model.m
        elif model.kind == "gbep":
            self.drift = np.empty(n)
            self.noise = np.empty(n)
            self.d_max = 0.0
            if isinstance(model.a, ConstRate):
                self.a_code, self.a_param = 1, model.a.c
            elif isinstance(model.a, SqrtRate):
                self.a_code = 2
            elif isinstance(model.a, LinearRate):
                self.a_code, self.a_param = 3, model.a.c
        else:
            raise ValidationError(f"no diffusion kernel for model kind {model.kind!r}")

    def update(self, z: np.ndarray):
        if self.model.kind == "gbep":
            a_bond = self.model.a_values(0.5 * (z + np.roll(z, -1)))
            np.copyto(self.noise, a_bond)
            np.multiply(a_bond, a_bond, out=self.drift)
            self.d_max = float(self.drift.max())


# ---------------------------------------------------------------------------
# Single-step public API
# ---------------------------------------------------------------------------


def _one_step(state: EnergyState, model: ModelSpec, dt: float, rng: RandomStream,
              tilt: TiltField | None, noise: bool, c_safe: float) -> EnergyState:
    z = state.energies.copy()
    n = state.n_sites
    coefs = _Coefs(model, n)
    coefs.update(z)
    tilt_e = None
    e_max = 0.0
    if tilt is not None:
        if not tilt.covers(state.time, state.time + dt):
            raise ValidationError("tilt field does not cover the requested step")
        tilt_e = tilt.bond_differences(state.time, n)
        e_max = float(np.max(np.abs(tilt_e)))
    bound = stable_dt(float(z.max(initial=0.0)), coefs.d_max, n, c_safe, e_max)
    if dt > bound * _DT_SLACK:
        raise ValidationError(f"dt = {dt:.3e} exceeds the stability bound {bound:.3e}")
    db = rng.normals(n) * math.sqrt(dt) if noise else None
    _apply_diffusion_step(z, n, dt, db, coefs.drift, coefs.noise, tilt_e)
    return EnergyState(z, time=state.time + dt)


def step_bep(state: EnergyState, m: float, dt: float, rng: RandomStream, *,
             noise: bool = True, c_safe: float = C_SAFE_DEFAULT) -> EnergyState:
    """One Euler-Maruyama step of BEP(m)."""
    return _one_step(state, ModelSpec.bep(m), dt, rng, None, noise, c_safe)


def step_gbep(state: EnergyState, a: Callable[[np.ndarray], np.ndarray], dt: float,
              rng: RandomStream, *, noise: bool = True,
              c_safe: float = C_SAFE_DEFAULT) -> EnergyState:
    """One Euler-Maruyama step of GBEP(a): bond factor a((z_i+z_{i+1})/2) on the
    noise and its square on the drift.  a == 1 reproduces step_bep(m=1)
    path-for-path given identical noise."""
    return _one_step(state, ModelSpec.gbep(a), dt, rng, None, noise, c_safe)


def step_wabep(state: EnergyState, m: float, tilt: TiltField, dt: float,
               rng: RandomStream, *, noise: bool = True,
               c_safe: float = C_SAFE_DEFAULT) -> EnergyState:
    """One step of the weakly asymmetric BEP(m): BEP plus the antisymmetric
    per-bond drift -N^2 E_i z_i z_{i+1} dt, with E_i the site differences of
    H at the step start time."""
    return _one_step(state, ModelSpec.bep(m), dt, rng, tilt, noise, c_safe)


def step_bmp(state: MomentumState, dt: float, rng: RandomStream, *,
             noise: bool = True, c_safe: float = C_SAFE_DEFAULT) -> MomentumState:
    """One splitting step of the momentum process (single layer).

    Each bond rotates (p_i, p_{i+1}) by an independent Normal(0, N^2 dt)
    angle; bonds are visited in a fresh uniform random order, which removes
    the directional splitting bias at O(dt).
    """
    if state.layers != 1:
        raise ValidationError("step_bmp is the m = 1 validation path; use BEP(m) for m >= 2")
    p = state.momenta[:, 0].copy()
    n = state.n_sites
    bound = stable_dt(float(np.max(p * p)), 1.0, n, c_safe)
    if dt > bound * _DT_SLACK:
        raise ValidationError(f"dt = {dt:.3e} exceeds the stability bound {bound:.3e}")
    order = rng.permutation(n)
    angles = rng.normals(n) * (n * math.sqrt(dt)) if noise else np.zeros(n)
    _bmp_kernel(p, order, angles)
    return MomentumState(p[:, None], time=state.time + dt)


def bmp_rotate_bonds(p: np.ndarray, order: Sequence[int], angles: np.ndarray) -> None:
    """Apply bond rotations in the given order, in place (p and angles are (N,))."""
    _bmp_kernel(p, np.asarray(order, dtype=np.int64), np.asarray(angles, dtype=float))


def kmp_event(z: np.ndarray, bond: int, s: float) -> np.ndarray:
    """Single redistribution event (z_i, z_{i+1}) <- (s T, T - s T), out of place.

    The update conserves the pair sum exactly in floating point and keeps
    both sites non-negative exactly.
    """
    out = np.asarray(z, dtype=float).copy()
    j = (bond + 1) % out.size
    total = out[bond] + out[j]
    out[bond] = s * total
    out[j] = total - out[bond]
    return out


def run_kmp(state: EnergyState, t_end: float, rng: RandomStream,
            log: _LogBuilder | None = None) -> EnergyState:
    """Exact event-driven KMP from state.time to t_end.

    Bonds ring at rate 2 each on the accelerated clock (total rate 2 N^3); at
    each event the chosen bond's joint energy is redistributed uniformly.
    Waiting times, bonds and fractions are drawn in fixed-size chunks (a
    deterministic function of the stream).
    """
    if not t_end > state.time:
        raise ValidationError("t_end must exceed the state time")
    z = state.energies.copy()
    n = state.n_sites
    rate = 2.0 * n ** 3
    t = state.time
    buf_t = np.empty(_KMP_CHUNK)
    buf_b = np.empty(_KMP_CHUNK, dtype=np.int64)
    buf_s = np.empty(_KMP_CHUNK)
    done = False
    while not done:
        waits = rng.exponentials(rate, _KMP_CHUNK)
        bonds = rng.integers(n, _KMP_CHUNK)
        fracs = rng.uniforms(_KMP_CHUNK)
        t, used, done = _kmp_kernel(z, t, t_end, waits, bonds, fracs, buf_t, buf_b, buf_s)
        if log is not None and used:
            log.times.append(buf_t[:used].copy())
            log.bonds.append(buf_b[:used].copy())
            log.values.append(buf_s[:used].copy())
    return EnergyState(z, time=t_end)


# ---------------------------------------------------------------------------
# Whole trajectories
# ---------------------------------------------------------------------------


def simulate_trajectory(model: ModelSpec | str, initial: EnergyState | MomentumState,
                        t_end: float, n_snapshots: int, rng: RandomStream, *,
                        tilt: TiltField | None = None, keep_noise_log: bool = False,
                        noise: bool = True, c_safe: float = C_SAFE_DEFAULT) -> TrajectoryRecord:
    """Run one path with snapshot capture at uniform sample times.

    `model` is a ModelSpec or the string "bmp" (momentum process, exact
    rotations; `initial` must then be a MomentumState).  A non-None `tilt`
    turns BEP(m) into WABEP(m) and marks the record as generated under the
    tilted measure.
    """
    if n_snapshots < 2:
        raise ValidationError("need at least 2 snapshots (initial and final)")
    t0 = initial.time
    if not t_end > t0:
        raise ValidationError("t_end must exceed the initial time")
    times = np.linspace(t0, t_end, n_snapshots)

    if isinstance(model, str):
        if model != "bmp":
            raise ValidationError(f"unknown model {model!r}")
        return _simulate_bmp(initial, times, rng, noise, c_safe, keep_noise_log)
    if tilt is not None and model.kind != "bep":
        raise ValidationError("tilting is defined for BEP(m) only")
    if not isinstance(initial, EnergyState):
        raise ValidationError(f"{model.kind} needs an EnergyState initial condition")
    if model.kind == "kmp":
        return _simulate_kmp(model, initial, times, rng, keep_noise_log)
    return _simulate_diffusion(model, initial, times, rng, tilt, noise, c_safe, keep_noise_log)


def _snap_tolerance(times: np.ndarray) -> float:
    return 1e-12 * max(1.0, abs(float(times[-1])))


_NOISE_CHUNK = 256


class _NoiseBuffer:
    """Serves per-step normal rows from chunked draws.

    numpy fills multidimensional draws row-major, so the served value stream
    is identical to drawing rng.normals(n) once per step.
    """

    def __init__(self, rng: RandomStream, n: int, chunk: int = _NOISE_CHUNK):
        self.rng = rng
        self.n = n
        self.size = chunk
        self.chunk = np.empty((0, n))
        self.pos = 0

    def ensure(self):
        if self.pos >= self.chunk.shape[0]:
            self.chunk = self.rng.normals((self.size, self.n))
            self.pos = 0

    def next_row(self) -> np.ndarray:
        self.ensure()
        row = self.chunk[self.pos]
        self.pos += 1
        return row


def _simulate_diffusion(model, initial, times, rng, tilt, noise, c_safe, keep_log):
    n = initial.n_sites
    sampler = None
    if tilt is not None:
        if not tilt.covers(times[0], times[-1]):
            raise ValidationError("tilt field does not cover the simulation interval")
        sampler = _TiltSampler(tilt, n)
    log = _LogBuilder("diffusion", n) if keep_log else None
    coefs = _Coefs(model, n)
    z = initial.energies.copy()
    t = float(times[0])
    snaps = np.empty((times.size, n))
    snaps[0] = z
    relocated = 0.0
    truncated = 0.0
    eps = _snap_tolerance(times)
    buf = _NoiseBuffer(rng, n)
    if model.kind == "gbep" and coefs.a_code == 0:
        stepper = _gbep_segment_python  # arbitrary rate callables stay in python
    else:
        stepper = _segment_compiled
    for k in range(1, times.size):
        ts = float(times[k])
        t, moved, lost = stepper(z, t, ts, eps, n, c_safe, coefs, sampler,
                                 buf, noise, log)
        relocated += moved
        truncated += lost
        t = ts
        snaps[k] = z
    return TrajectoryRecord(model=model, times=times, energies=snaps, tilt=tilt,
                            noise_log=log.build() if log else None,
                            truncated_mass=truncated, relocated_deficit=relocated)


_NO_TILT_LEVELS = np.zeros((2, 1))


def _segment_compiled(z, t, ts, eps, n, c_safe, coefs, sampler, buf, noise, log):
    relocated = 0.0
    truncated = 0.0
    out_ts = np.empty(buf.size)
    out_dts = np.empty(buf.size)
    db_buf = np.empty(n)
    tilt_buf = np.empty(n)
    flux_buf = np.empty(n)
    if sampler is not None:
        e_levels = sampler.e_levels
        tilt_t0, tilt_dt, e_max = sampler.tilt.t0, sampler.tilt.dt, sampler.e_max
        has_tilt = True
    else:
        e_levels, tilt_t0, tilt_dt, e_max, has_tilt = _NO_TILT_LEVELS, 0.0, 1.0, 0.0, False
    zero_chunk = None
    while ts - t > eps:
        if noise:
            buf.ensure()
            chunk, start = buf.chunk, buf.pos
        else:
            if zero_chunk is None:
                zero_chunk = np.zeros((buf.size, n))
            chunk, start = zero_chunk, 0
        t, steps, moved, lost = _diffusion_segment(
            z, t, ts, eps, n, c_safe, coefs.drift, coefs.noise, coefs.d_max,
            coefs.a_code, coefs.a_param,
            chunk, start, noise, e_levels, tilt_t0, tilt_dt, e_max, has_tilt,
            out_ts, out_dts, db_buf, tilt_buf, flux_buf)
        relocated += moved
        truncated += lost
        if log is not None and steps:
            log.times.extend(out_ts[:steps].tolist())
            log.values.extend(out_dts[:steps].tolist())
            rows = chunk[start:start + steps] * np.sqrt(out_dts[:steps])[:, None]
            log.rows.extend(rows)
        if noise:
            buf.pos = start + steps
    return t, relocated, truncated


def _gbep_segment_python(z, t, ts, eps, n, c_safe, coefs, sampler, buf, noise, log):
    relocated = 0.0
    truncated = 0.0
    z_max = float(z.max(initial=0.0))
    while ts - t > eps:
        coefs.update(z)
        tilt_e = sampler.at(t) if sampler is not None else None
        e_max = sampler.e_max if sampler is not None else 0.0
        dt = min(stable_dt(z_max, coefs.d_max, n, c_safe, e_max), ts - t)
        db = buf.next_row() * math.sqrt(dt) if noise else None
        if log is not None:
            log.times.append(t)
            log.values.append(dt)
            log.rows.append(db.copy() if db is not None else np.zeros(n))
        moved, lost, z_max = _apply_diffusion_step(z, n, dt, db, coefs.drift,
                                                   coefs.noise, tilt_e)
        relocated += moved
        truncated += lost
        t += dt
    return t, relocated, truncated


def _simulate_kmp(model, initial, times, rng, keep_log):
    n = initial.n_sites
    log = _LogBuilder("kmp", n) if keep_log else None
    snaps = np.empty((times.size, n))
    snaps[0] = initial.energies
    state = initial
    for k in range(1, times.size):
        state = run_kmp(state, float(times[k]), rng, log)
        snaps[k] = state.energies
    return TrajectoryRecord(model=model, times=times, energies=snaps,
                            noise_log=log.build() if log else None)


def _simulate_bmp(initial, times, rng, noise, c_safe, keep_log):
    if keep_log:
        raise ValidationError("noise logs are not supported for the momentum process")
    if not isinstance(initial, MomentumState):
        raise ValidationError("bmp needs a MomentumState initial condition")
    if initial.layers != 1:
        raise ValidationError("the momentum simulator runs the single-layer process")
    p = initial.momenta[:, 0].copy()
    n = initial.n_sites
    t = float(times[0])
    snaps = np.empty((times.size, n))
    snaps[0] = p * p
    eps = _snap_tolerance(times)
    for k in range(1, times.size):
        ts = float(times[k])
        while ts - t > eps:
            z_max = float(np.max(p * p))
            dt = min(stable_dt(z_max, 1.0, n, c_safe), ts - t)
            order = rng.permutation(n)
            angles = rng.normals(n) * (n * math.sqrt(dt)) if noise else np.zeros(n)
            _bmp_kernel(p, order, angles)
            t += dt
        t = ts
        snaps[k] = p * p
    return TrajectoryRecord(model="bmp", times=times, energies=snaps)


def simulate_ensemble(model, initial, t_end: float, n_snapshots: int, n_paths: int,
                      seed: int, *, tilt: TiltField | None = None, jobs: int = 1,
                      keep_noise_log: bool = False, noise: bool = True,
                      c_safe: float = C_SAFE_DEFAULT) -> list[TrajectoryRecord]:
    """Independent trajectories on streams (seed, 0..n_paths-1).

    `initial` is either a fixed state shared by every path or a callable
    receiving the path's RandomStream (so random initial data is drawn from
    the same stream as the dynamics, keeping each path individually
    re-runnable).  Results are ordered by stream id and independent of `jobs`.
    """
    args = [(model, initial, t_end, n_snapshots, seed, k, tilt, keep_noise_log, noise, c_safe)
            for k in range(n_paths)]
    if jobs <= 1:
        return [_run_member(a) for a in args]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_member, args, chunksize=max(1, n_paths // (4 * jobs))))


def _run_member(packed) -> TrajectoryRecord:
    model, initial, t_end, n_snapshots, seed, k, tilt, keep_log, noise, c_safe = packed
    rng = RandomStream(seed, k)
    state = initial(rng) if callable(initial) else initial
    return simulate_trajectory(model, state, t_end, n_snapshots, rng, tilt=tilt,
                               keep_noise_log=keep_log, noise=noise, c_safe=c_safe)


# ---------------------------------------------------------------------------
# Exact replay (Girsanov support)
# ---------------------------------------------------------------------------


def replay_diffusion(record: TrajectoryRecord):
    """Yield (t, dt, z_before, dB) per logged step, advancing exactly as simulated.

    The yielded z is the live state array: read it, do not mutate it.
    """
    log = record.noise_log
    if log is None or log.kind != "diffusion":
        raise ValidationError("record has no diffusion noise log")
    model = record.model
    if isinstance(model, str) or model.kind not in ("bep", "gbep"):
        raise ValidationError("replay is defined for the diffusion processes")
    n = record.n_sites
    sampler = _TiltSampler(record.tilt, n) if record.tilt is not None else None
    coefs = _Coefs(model, n)
    z = record.energies[0].copy()
    for t, dt, db in zip(log.step_times, log.step_dts, log.increments):
        yield float(t), float(dt), z, db
        coefs.update(z)
        tilt_e = sampler.at(float(t)) if sampler is not None else None
        _apply_diffusion_step(z, n, float(dt), db, coefs.drift, coefs.noise, tilt_e)
