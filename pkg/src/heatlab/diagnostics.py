"""Stochastic-analysis diagnostics linking the simulators to the limit theory.

Girsanov reweighting
--------------------
Weights are computed from the logged bond noise: for the Euler chain the
per-bond flux increments are conditionally Gaussian, so the discrete
Radon-Nikodym derivative between the tilted (WABEP) and untilted (BEP) chain
measures is exact.  With the per-bond drift-to-noise ratio

    g_i = -(N/2) E_i sqrt(z_i^+ z_{i+1}^+),

the log-weight with numerator measure T evaluated on a path generated under
measure G is  sum_i [ s g_i dB^G_i - (1/2) g_i^2 dt ]  after re-expressing the
logged increments as Brownian increments under the denominator measure; the
two directions computed from the same log sum to zero path by path.  The
compensator rate (1/2) sum_i g_i^2 = (N^2/8) sum_i E_i^2 z_i z_{i+1}; divided
by N it converges to the (1/8) int (dH/dx)^2 rho^2 density form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.special import gammaincc

from heatlab.core import (
    EnergyState,
    ModelSpec,
    MomentumState,
    TiltField,
    TrajectoryRecord,
    site_positions,
)
from heatlab.dynamics import replay_diffusion, simulate_trajectory
from heatlab.errors import ValidationError
from heatlab.sampling import GammaLaw, RandomStream, sample_site


# ---------------------------------------------------------------------------
# Girsanov weights
# ---------------------------------------------------------------------------


def girsanov_bond_coefficients(z: np.ndarray, tilt_e: np.ndarray, n: int) -> np.ndarray:
    """Per-bond drift change over noise amplitude: g_i = -(N/2) E_i sqrt(z_i^+ z_{i+1}^+)."""
    zp = np.clip(z, 0.0, None)
    return -0.5 * n * tilt_e * np.sqrt(zp * np.roll(zp, -1))


@dataclass
class GirsanovAccumulator:
    """Running stochastic-integral and compensator terms of a log path weight."""

    stochastic: float = 0.0
    compensator: float = 0.0

    def add_step(self, g: np.ndarray, db_denominator: np.ndarray, dt: float, sign: float):
        """Add one step: sign * sum(g dB) - (1/2) sum(g^2) dt.

        `db_denominator` must be the Brownian increments as seen under the
        denominator measure of the weight.
        """
        self.stochastic += sign * float(np.dot(g, db_denominator))
        self.compensator += 0.5 * float(np.dot(g, g)) * dt

    @property
    def log_weight(self) -> float:
        return self.stochastic - self.compensator


def girsanov_log_weight(record: TrajectoryRecord, tilt: TiltField,
                        numerator: str) -> float:
    """log dP_numerator / dP_generating, evaluated on the recorded path.

    `numerator` is "wabep" (weight toward the tilted measure) or "bep".  The
    generating measure is read off the record (`record.tilt` present means it
    was simulated as WABEP); a tilted record's field must be the same tilt
    passed here.  Requires the record's noise log.
    """
    if numerator not in ("wabep", "bep"):
        raise ValidationError("numerator must be 'wabep' or 'bep'")
    model = record.model
    if isinstance(model, str) or model.kind != "bep":
        raise ValidationError("Girsanov weights are defined between BEP(m) and WABEP(m)")
    if record.noise_log is None:
        raise ValidationError("record has no noise log; rerun with keep_noise_log=True")
    generated_under = "bep" if record.tilt is None else "wabep"
    if generated_under == "wabep":
        same = (record.tilt.values.shape == tilt.values.shape
                and np.array_equal(record.tilt.values, tilt.values)
                and np.array_equal(record.tilt.times, tilt.times))
        if not same:
            raise ValidationError("tilt grid mismatch: record was generated under a "
                                  "different tilt field")
    if not tilt.covers(float(record.times[0]), float(record.times[-1])):
        raise ValidationError("tilt field does not cover the recorded trajectory")

    n = record.n_sites
    from heatlab.dynamics import _TiltSampler  # same interpolation as the simulator
    sampler = _TiltSampler(tilt, n)
    acc = GirsanovAccumulator()
    sign = 1.0 if numerator == "wabep" else -1.0
    for t, dt, z, db in replay_diffusion(record):
        g = girsanov_bond_coefficients(z, sampler.at(t), n)
        if numerator == "wabep":
            db_denom = db if generated_under == "bep" else db + g * dt
        else:
            db_denom = db if generated_under == "wabep" else db - g * dt
        acc.add_step(g, db_denom, dt, sign)
    return acc.log_weight


def compensator_rate(z: np.ndarray, tilt_e: np.ndarray) -> float:
    """Compensator per unit trajectory time on a frozen state:
    (1/2) sum_i g_i^2 = (N^2/8) sum_i E_i^2 z_i z_{i+1}."""
    z = np.asarray(z, dtype=float)
    g = girsanov_bond_coefficients(z, np.asarray(tilt_e, dtype=float), z.size)
    return 0.5 * float(np.dot(g, g))


# ---------------------------------------------------------------------------
# Martingale statistics
# ---------------------------------------------------------------------------


def _trapezoid_cumulative(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Cumulative trapezoid integral along axis 0."""
    out = np.zeros_like(values)
    dts = np.diff(times)
    increments = 0.5 * (values[1:] + values[:-1]) * dts[:, None] if values.ndim == 2 \
        else 0.5 * (values[1:] + values[:-1]) * dts
    out[1:] = np.cumsum(increments, axis=0)
    return out


def martingale_statistics(records: Sequence[TrajectoryRecord],
                          phi: Callable[[np.ndarray], np.ndarray]) -> dict:
    """Ensemble statistics of M^N_t = <pi(t),phi> - <pi(0),phi> - int <pi, D Lap_N phi> ds.

    All records must share the model, lattice size and sample times, and a
    model with constant diffusivity (BEP or KMP).  Reports the ensemble mean
    (zero for a martingale), its standard error, the variance versus time,
    and the neighbour-product quadratic-variation proxy
    (4/N^2) sum_i phi_i^2 int u_i ds with u_i = z_i z_{i+1} + z_{i-1} z_i.
    """
    if not records:
        raise ValidationError("empty ensemble")
    first = records[0]
    model = first.model
    if isinstance(model, str) or model.kind == "gbep":
        raise ValidationError("martingale statistics need a constant-diffusivity model "
                              "(BEP or KMP)")
    label = model.label()
    n = first.n_sites
    times = first.times
    for rec in records[1:]:
        same_model = not isinstance(rec.model, str) and rec.model.label() == label
        if not same_model or rec.n_sites != n or not np.array_equal(rec.times, times):
            raise ValidationError("mixed ensembles are rejected: all records must share "
                                  "model, lattice size and sample times")

    dcoef = float(model.diffusivity(np.zeros(1))[0])
    pos = site_positions(n)
    phi_i = np.asarray(phi(pos), dtype=float)
    lap_phi = n * n * (np.roll(phi_i, 1) - 2.0 * phi_i + np.roll(phi_i, -1))

    m_paths = np.empty((len(records), times.size))
    qv_paths = np.empty_like(m_paths)
    for p, rec in enumerate(records):
        z = rec.energies
        pairing = z @ phi_i / n
        drift = (z @ lap_phi) * (dcoef / n)
        m_paths[p] = pairing - pairing[0] - _trapezoid_cumulative(drift, times)
        zz = z * np.roll(z, -1, axis=1)
        u_phi2 = (zz + np.roll(zz, 1, axis=1)) @ (phi_i ** 2)
        qv_paths[p] = (4.0 / n ** 2) * _trapezoid_cumulative(u_phi2, times)

    n_paths = len(records)
    mean = m_paths.mean(axis=0)
    std = m_paths.std(axis=0, ddof=1) if n_paths > 1 else np.zeros_like(mean)
    return {
        "model": label,
        "n_sites": n,
        "n_paths": n_paths,
        "times": times.copy(),
        "mean": mean,
        "se_mean": std / math.sqrt(max(n_paths, 1)),
        "variance": std ** 2,
        "qv_proxy_mean": qv_paths.mean(axis=0),
    }


# ---------------------------------------------------------------------------
# Replacement-lemma gap
# ---------------------------------------------------------------------------


def replacement_gap(record: TrajectoryRecord, psi: Callable[[np.ndarray], np.ndarray],
                    eps: float) -> float:
    """Time integral of |pair sum - squared block average sum| along the path.

    Compares (1/N) sum_i z_i z_{i+1} psi_i against (1/N) sum_i zbar_i^2 psi_i
    where zbar_i averages z over the window |j - i| <= floor(eps N).  This is
    a dynamics property (local equilibrium), not a pointwise identity: frozen
    non-equilibrium states keep a gap of order one.
    """
    n = record.n_sites
    radius = int(math.floor(eps * n))
    if radius < 1:
        raise ValidationError(f"block radius eps*N = {eps * n:.3g} must be at least 1")
    psi_i = np.asarray(psi(site_positions(n)), dtype=float)
    z = record.energies
    pair_term = (z * np.roll(z, -1, axis=1)) @ psi_i / n
    block = uniform_filter1d(z, size=2 * radius + 1, axis=1, mode="wrap")
    block_term = (block ** 2) @ psi_i / n
    return float(np.trapezoid(np.abs(pair_term - block_term), record.times))


# ---------------------------------------------------------------------------
# Weak error against a PDE reference
# ---------------------------------------------------------------------------

DEFAULT_TEST_FUNCTIONS = (
    ("1", lambda x: np.ones_like(x)),
    ("cos2pix", lambda x: np.cos(2 * np.pi * x)),
    ("sin2pix", lambda x: np.sin(2 * np.pi * x)),
)


def ensemble_weak_error(records: Sequence[TrajectoryRecord], reference,
                        phis=DEFAULT_TEST_FUNCTIONS) -> dict:
    """Sup over test functions and snapshots of |mean <pi_N, phi> - <rho_ref, phi>|.

    `reference` is a DensityField whose time grid contains the records'
    sample times (up to roundoff).  Also returns the per-snapshot ensemble
    means, variances and reference pairings per test function.
    """
    if not records:
        raise ValidationError("empty ensemble")
    first = records[0]
    n = first.n_sites
    times = first.times
    for rec in records[1:]:
        if rec.n_sites != n or not np.array_equal(rec.times, times):
            raise ValidationError("records must share lattice size and sample times")
    ref_idx = np.searchsorted(reference.times, times - 1e-12 * max(1.0, abs(times[-1])))
    if np.any(ref_idx >= reference.nt) or \
            np.any(np.abs(reference.times[ref_idx] - times) > 1e-9 * max(1.0, abs(times[-1]))):
        raise ValidationError("reference field does not contain the sample times")

    pos = site_positions(n)
    stack = np.stack([rec.energies for rec in records])  # (paths, snaps, N)
    out = {"times": times.copy(), "n_sites": n, "n_paths": len(records), "per_phi": {}}
    worst = 0.0
    for name, phi in phis:
        phi_sites = np.asarray(phi(pos), dtype=float)
        pairings = stack @ phi_sites / n                       # (paths, snaps)
        ref_vals = reference.values[ref_idx] @ np.asarray(phi(reference.xs), dtype=float) \
            / reference.nx
        mean = pairings.mean(axis=0)
        err = np.abs(mean - ref_vals)
        out["per_phi"][name] = {
            "mean": mean,
            "variance": pairings.var(axis=0, ddof=1) if len(records) > 1 else 0 * mean,
            "reference": ref_vals,
            "max_error": float(err.max()),
        }
        worst = max(worst, float(err.max()))
    out["weak_error"] = worst
    return out


# ---------------------------------------------------------------------------
# Equilibrium tail study (exact)
# ---------------------------------------------------------------------------


def equilibrium_tail_study(m: float, theta: float, c: float,
                           n_values: Sequence[int]) -> dict:
    """Exact Gamma-tail large-deviation table.

    The total energy of N sites is Gamma(N m/2, theta), so
    P((1/N) sum z_i >= c) = Q(N m/2, N c / theta) with Q the regularized upper
    incomplete gamma function (scipy implementation, relative accuracy well
    below 1e-12 in this range).  Reports -(1/N) log P next to piecewise rate
    value (m/2)(c/rho0 - 1 - log(c/rho0)), rho0 = m theta / 2.
    """
    if not (m > 0 and theta > 0):
        raise ValidationError("need m > 0 and theta > 0")
    rho0 = 0.5 * m * theta
    if not c > rho0:
        raise ValidationError(f"level c = {c} must exceed rho0 = {rho0} "
                              "(lower tail not in scope)")
    n_values = [int(n) for n in n_values]
    if any(n < 1 for n in n_values):
        raise ValidationError("lattice sizes must be positive")
    u = c / rho0
    rate = 0.5 * m * (u - 1.0 - math.log(u))
    ns = np.array(sorted(n_values), dtype=int)
    tails = gammaincc(0.5 * m * ns, ns * c / theta)
    if np.any(tails <= 0.0):
        raise ValidationError("tail probability underflows for the requested sizes")
    return {
        "m": m, "theta": theta, "c": c, "rho0": rho0,
        "n": ns,
        "minus_log_p_over_n": -np.log(tails) / ns,
        "rate_value": rate,
    }


# ---------------------------------------------------------------------------
# BMP vs BEP(1) cross-validation
# ---------------------------------------------------------------------------


def bmp_bep_crosscheck(n_sites: int, theta: float, t_end: float, ensemble: int,
                       seed: int = 0, *, include_kmp: bool = False,
                       c_safe: float = 0.05) -> dict:
    """First and second moments of z(T): exact rotations versus the Euler chain.

    Path k draws its initial energies from Gamma(1/2, theta) on stream
    (seed, k); the momentum leg runs on stream (seed, ensemble + k), the
    energy leg on (seed, 2*ensemble + k), so the legs are paired at t = 0 and
    independent afterwards.  Comparisons are paired per path, with z-scores
    of the pooled per-site moments.  Optionally also compares first moments
    of KMP against BEP(2) (streams offset by 3*ensemble and 4*ensemble).
    """
    law1 = GammaLaw(theta=theta, m=1.0)
    diffs_m1 = np.empty(ensemble)
    diffs_m2 = np.empty(ensemble)
    for k in range(ensemble):
        init_rng = RandomStream(seed, k)
        z0 = sample_site(law1, init_rng, size=n_sites)
        signs = np.where(init_rng.uniforms(n_sites) < 0.5, -1.0, 1.0)
        p0 = MomentumState((signs * np.sqrt(z0))[:, None])
        rec_bmp = simulate_trajectory("bmp", p0, t_end, 2,
                                      RandomStream(seed, ensemble + k), c_safe=c_safe)
        rec_bep = simulate_trajectory(ModelSpec.bep(1.0), EnergyState(z0), t_end, 2,
                                      RandomStream(seed, 2 * ensemble + k), c_safe=c_safe)
        zb = rec_bmp.energies[-1]
        ze = rec_bep.energies[-1]
        diffs_m1[k] = zb.mean() - ze.mean()
        diffs_m2[k] = (zb ** 2).mean() - (ze ** 2).mean()

    def summarize(diffs):
        se = diffs.std(ddof=1) / math.sqrt(ensemble)
        zscore = diffs.mean() / se if se > 0 else 0.0
        # absolute floor: exactly-conserved quantities differ only by roundoff,
        # whose accumulation is not a mean-zero statistic
        agree = abs(diffs.mean()) <= 3.0 * se + 1e-12 * theta
        return {"difference": float(diffs.mean()), "se": float(se),
                "zscore": float(zscore), "agree_3sigma": bool(agree)}

    report = {
        "n_sites": n_sites, "theta": theta, "t_end": t_end, "ensemble": ensemble,
        "first_moment": summarize(diffs_m1),
        "second_moment": summarize(diffs_m2),
    }
    if include_kmp:
        law2 = GammaLaw(theta=theta, m=2.0)
        diffs = np.empty(ensemble)
        for k in range(ensemble):
            z0 = sample_site(law2, RandomStream(seed, 3 * ensemble + k), size=n_sites)
            rec_kmp = simulate_trajectory(ModelSpec.kmp(), EnergyState(z0), t_end, 2,
                                          RandomStream(seed, 4 * ensemble + k))
            rec_bep = simulate_trajectory(ModelSpec.bep(2.0), EnergyState(z0), t_end, 2,
                                          RandomStream(seed, 5 * ensemble + k),
                                          c_safe=c_safe)
            diffs[k] = rec_kmp.energies[-1].mean() - rec_bep.energies[-1].mean()
        report["kmp_vs_bep2_first_moment"] = summarize(diffs)
    return report
