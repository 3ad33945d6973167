"""Experiment runner: every module behind a reproducible command.

Commands: simulate, compare, hydro, tilt, rate, girsanov, ldp-eq,
replacement, bb, report-data.  Global flags --seed, --jobs, --out-dir,
--config.  Exit codes: 0 ok, 2 usage/validation, 3 numeric failure.

Configs are flat `key = value` text files mirrored 1:1 by the flags (flags
override the file); every run writes its fully resolved config next to the
outputs and embeds its sha256 digest in every artifact, so re-analysis
against the wrong inputs is detectable (`--expect-digest`).  File schemas
are documented in docs/formats.md.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from heatlab import core, diagnostics, dynamics, hydro, ldp
from heatlab.core import (
    DensityField,
    EnergyState,
    ModelSpec,
    TiltField,
    read_csv_comments,
    read_field_csv,
    write_field_csv,
)
from heatlab.errors import HeatLabError, NumericalError, ValidationError
from heatlab.sampling import GammaLaw, RandomStream, sample_invariant_state

FLOAT_FMT = core.FLOAT_FMT


# ---------------------------------------------------------------------------
# Picklable parameter-function presets
# ---------------------------------------------------------------------------


class ConstProfile:
    def __init__(self, c: float):
        self.c = float(c)

    def __call__(self, r):
        return np.full_like(np.asarray(r, dtype=float), self.c)


class CosineProfile:
    def __init__(self, mean: float, amp: float, wavenumber: int):
        self.mean, self.amp, self.k = float(mean), float(amp), int(wavenumber)

    def __call__(self, x):
        return self.mean + self.amp * np.cos(2 * np.pi * self.k * np.asarray(x, dtype=float))


def parse_rate_function(spec: str) -> ModelSpec:
    """GBEP rate presets: const:c, sqrt, linear:c (compiled stepper support)."""
    name, _, arg = spec.partition(":")
    if name == "const":
        return ModelSpec.gbep(core.ConstRate(float(arg)), label=spec)
    if name == "sqrt":
        return ModelSpec.gbep(core.SqrtRate(), label="sqrt")
    if name == "linear":
        return ModelSpec.gbep(core.LinearRate(float(arg)), label=spec)
    raise ValidationError(f"unknown rate function preset {spec!r}")


def parse_model(kind: str, m: float, a_spec: str | None) -> ModelSpec | str:
    kind = kind.lower()
    if kind == "bep":
        return ModelSpec.bep(m)
    if kind == "kmp":
        return ModelSpec.kmp()
    if kind == "bmp":
        return "bmp"
    if kind == "gbep":
        if not a_spec:
            raise ValidationError("gbep needs --a (const:c | sqrt | linear:c)")
        return parse_rate_function(a_spec)
    raise ValidationError(f"unknown model {kind!r}")


def parse_profile(spec: str):
    """Initial profiles: const:c | cosine:mean,amp,wavenumber | file:path."""
    name, _, arg = spec.partition(":")
    if name == "const":
        return ConstProfile(float(arg))
    if name == "cosine":
        mean, amp, k = (float(v) for v in arg.split(","))
        prof = CosineProfile(mean, amp, int(k))
        if mean - abs(amp) < 0:
            raise ValidationError("cosine profile must stay non-negative")
        return prof
    if name == "file":
        state = core.read_state_csv(arg)
        return state
    raise ValidationError(f"unknown profile spec {spec!r}")


def initial_state_from_profile(profile, n_sites: int, theta: float | None,
                               m_for_law: float) -> EnergyState | object:
    """Deterministic profile sampling at the site positions, or the invariant draw."""
    if isinstance(profile, EnergyState):
        if profile.n_sites != n_sites:
            raise ValidationError(f"state file has N = {profile.n_sites}, expected {n_sites}")
        return profile
    if profile == "invariant":
        law = GammaLaw(theta=theta, m=m_for_law)

        def factory(rng: RandomStream) -> EnergyState:
            return sample_invariant_state(n_sites, law, rng)

        return factory
    return EnergyState(profile(core.site_positions(n_sites)))


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------


def read_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"{path}: malformed config line {raw!r}")
        key, _, val = line.partition("=")
        out[key.strip().replace("-", "_")] = val.strip()
    return out


def resolve_config(args: argparse.Namespace, parser_defaults: dict) -> dict:
    """defaults < config file < explicit flags, all as strings."""
    file_vals = read_config_file(args.config) if args.config else {}
    resolved = {}
    for key, default in parser_defaults.items():
        val = getattr(args, key)
        if val is None:
            val = file_vals.get(key, default)
        resolved[key] = val
    unknown = set(file_vals) - set(parser_defaults)
    if unknown:
        raise ValidationError(f"config keys not understood by this command: {sorted(unknown)}")
    return resolved


def config_text(command: str, resolved: dict) -> str:
    lines = [f"command = {command}"]
    for key in sorted(resolved):
        lines.append(f"{key} = {resolved[key]}")
    return "\n".join(lines) + "\n"


def config_digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


class RunContext:
    def __init__(self, command: str, resolved: dict, out_dir: str):
        self.command = command
        self.resolved = resolved
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.text = config_text(command, resolved)
        self.digest = config_digest(self.text)
        (self.out_dir / f"{command.replace('-', '_')}_config.txt").write_text(self.text)

    def comments(self) -> list[str]:
        return [f"command={self.command}", f"config_digest={self.digest}"]

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def write_json(self, name: str, payload: dict) -> Path:
        payload = {"command": self.command, "config_digest": self.digest, **payload}
        p = self.path(name)
        p.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
        return p

    def write_rows_csv(self, name: str, header: list[str], rows) -> Path:
        p = self.path(name)
        with open(p, "w", newline="") as fh:
            for line in self.comments():
                fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
        return p


def _cell(v):
    if isinstance(v, float):
        return FLOAT_FMT % v
    if isinstance(v, (np.floating,)):
        return FLOAT_FMT % float(v)
    return v


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")


def check_expected_digest(args, path: str):
    expected = getattr(args, "expect_digest", None)
    if not expected:
        return
    meta = read_csv_comments(path)
    found = meta.get("config_digest", "<none>")
    if found != expected:
        raise ValidationError(f"{path}: config digest {found} does not match "
                              f"expected {expected}")


# ---------------------------------------------------------------------------
# Command implementations
# ---------------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v != ""]


def _build_model(cfg) -> ModelSpec | str:
    return parse_model(cfg["model"], float(cfg["m"]), cfg.get("a"))


def _model_m(model) -> float:
    if isinstance(model, str):
        return 1.0
    return model.m if model.kind == "bep" else (2.0 if model.kind == "kmp" else 1.0)


def _run_ensemble(model, cfg, n, seed, jobs, tilt=None, keep_noise_log=False):
    profile = cfg["init"]
    if profile == "invariant" or str(profile).startswith("invariant"):
        initial = initial_state_from_profile("invariant", n, float(cfg["theta"]),
                                             _model_m(model))
    else:
        initial = initial_state_from_profile(parse_profile(profile), n, None, 1.0)
    if isinstance(model, str):  # momentum process: deterministic |p| = sqrt(profile)
        raise ValidationError("the simulate command drives the energy processes; "
                              "the momentum process is exercised by the diagnostics API")
    return dynamics.simulate_ensemble(
        model, initial, float(cfg["t_end"]), int(cfg["snapshots"]),
        int(cfg["ensemble"]), seed, tilt=tilt, jobs=jobs, keep_noise_log=keep_noise_log)


def _summarize_records(records) -> dict:
    times = records[0].times
    pos = core.site_positions(records[0].n_sites)
    stack = np.stack([r.energies for r in records])
    summary = {"times": times, "n_paths": len(records), "n_sites": records[0].n_sites,
               "phi": {}}
    for name, phi in diagnostics.DEFAULT_TEST_FUNCTIONS:
        vals = stack @ np.asarray(phi(pos), dtype=float) / records[0].n_sites
        summary["phi"][name] = {
            "mean": vals.mean(axis=0),
            "variance": vals.var(axis=0, ddof=1) if len(records) > 1 else 0.0 * times,
        }
    mass = stack.sum(axis=2)
    summary["mass_rel_drift"] = float(np.max(np.abs(mass - mass[:, :1]) /
                                             np.maximum(np.abs(mass[:, :1]), 1e-300)))
    summary["truncated_mass_max"] = float(max(r.truncated_mass for r in records))
    summary["relocated_deficit_mean"] = float(np.mean([r.relocated_deficit for r in records]))
    return summary


def cmd_simulate(args, extra_defaults) -> int:
    cfg = resolve_config(args, extra_defaults)
    ctx = RunContext("simulate", {**cfg, "seed": args.seed, "jobs": args.jobs},
                     args.out_dir)
    n = int(cfg["n"])
    model = _build_model(cfg)
    records = _run_ensemble(model, cfg, n, args.seed, args.jobs)
    rows = []
    for p, rec in enumerate(records):
        for k, t in enumerate(rec.times):
            for i, z in enumerate(rec.energies[k]):
                rows.append([p, k, t, i, z])
    ctx.write_rows_csv("trajectories.csv", ["traj", "snapshot", "t", "i", "z"], rows)
    ctx.write_json("simulate_summary.json", _summarize_records(records))
    return 0


def _reference_for(model, cfg, records) -> DensityField:
    n_snap = int(cfg["snapshots"])
    t_end = float(cfg["t_end"])
    nx = int(cfg["nx"])
    per = max(1, int(math.ceil((int(cfg["nt"]) - 1) / max(n_snap - 1, 1))))
    nt = per * (n_snap - 1) + 1
    grid = hydro.PdeGrid(nx=nx, nt=nt, t_end=t_end)
    profile = parse_profile(cfg["init"])
    if isinstance(model, str) or model.kind == "bep":
        return hydro.solve_linear_heat(profile, _model_m(model), grid)
    if model.kind == "kmp":
        return hydro.solve_linear_heat(profile, 1.0, grid)
    return hydro.solve_nonlinear_heat(profile, model.a, grid)


def cmd_compare(args, extra_defaults) -> int:
    cfg = resolve_config(args, extra_defaults)
    ctx = RunContext("compare", {**cfg, "seed": args.seed, "jobs": args.jobs},
                     args.out_dir)
    n_list = _int_list(cfg["n_list"])
    model = _build_model(cfg)
    rows = []
    details = {}
    for n in n_list:
        records = _run_ensemble(model, cfg, n, args.seed, args.jobs)
        reference = _reference_for(model, cfg, records)
        report = diagnostics.ensemble_weak_error(records, reference)
        rows.append([n, report["weak_error"]])
        details[str(n)] = {
            "weak_error": report["weak_error"],
            "per_phi_max_error": {k: v["max_error"] for k, v in report["per_phi"].items()},
        }
    ctx.write_rows_csv("compare_weak_errors.csv", ["N", "weak_error"], rows)
    ctx.write_json("compare_summary.json",
                   {"n_list": n_list, "details": details,
                    "monotone_decreasing": bool(all(rows[i][1] > rows[i + 1][1]
                                                    for i in range(len(rows) - 1)))})
    return 0


def cmd_hydro(args, extra_defaults) -> int:
    cfg = resolve_config(args, extra_defaults)
    ctx = RunContext("hydro", cfg, args.out_dir)
    grid = hydro.PdeGrid(nx=int(cfg["nx"]), nt=int(cfg["nt"]), t_end=float(cfg["t_end"]))
    profile = parse_profile(cfg["init"])
    equation = cfg["equation"]
    if equation == "linear":
        fieldobj = hydro.solve_linear_heat(profile, float(cfg["d"]), grid)
    elif equation == "nonlinear":
        model = parse_rate_function(cfg["a"])
        fieldobj = hydro.solve_nonlinear_heat(profile, model.a, grid)
    elif equation == "tilted":
        model = _build_model(cfg)
        tilt = read_field_csv(cfg["tilt"], kind="tilt")
        fieldobj = hydro.solve_tilted(profile, model, tilt, grid)
    else:
        raise ValidationError(f"unknown equation {equation!r}")
    write_field_csv(fieldobj, ctx.path("hydro_field.csv"), value_name="rho",
                    comments=ctx.comments())
    ctx.write_json("hydro_summary.json", {
        "equation": equation, "nx": grid.nx, "nt": grid.nt, "t_end": grid.t_end,
        "mass_rel_drift": fieldobj.mass_drift(),
    })
    return 0


def cmd_tilt(args, extra_defaults) -> int:
    cfg = resolve_config(args, extra_defaults)
    ctx = RunContext("tilt", cfg, args.out_dir)
    check_expected_digest(args, cfg["field"])
    gamma = read_field_csv(cfg["field"], kind="density")
    model = _build_model(cfg)
    tilt = ldp.recover_tilt(gamma, model)
    write_field_csv(tilt, ctx.path("tilt_field.csv"), value_name="value",
                    comments=ctx.comments())
    residual = ldp.hydrodynamic_residual(gamma, model)
    ctx.write_json("tilt_summary.json", {
        "input": str(cfg["field"]),
        "max_abs_tilt": float(np.max(np.abs(tilt.values))),
        "residual_l2_per_level": np.sqrt((residual ** 2).mean(axis=1)),
    })
    return 0


def cmd_rate(args, extra_defaults) -> int:
    cfg = resolve_config(args, extra_defaults)
    ctx = RunContext("rate", cfg, args.out_dir)
    check_expected_digest(args, cfg["field"])
    gamma = read_field_csv(cfg["field"], kind="density")
    model = _build_model(cfg)
    i_direct = ldp.pathwise_rate_direct(gamma, model)
    i_onsager = ldp.pathwise_rate_onsager(gamma, model)
    residual = ldp.hydrodynamic_residual(gamma, model)
    scale = max(abs(i_direct), 1e-300)
    ctx.write_json("rate.json", {
        "model": model.label(),
        "I_direct": i_direct,
        "I_onsager": i_onsager,
        "relative_difference": abs(i_direct - i_onsager) / scale,
        "residual_norms": np.sqrt((residual ** 2).mean(axis=1)),
        "grid": {"nx": gamma.nx, "nt": gamma.nt, "t_end": gamma.t_end},
    })
    return 0


class SineTilt:
    def __init__(self, amplitude: float, wavenumber: int):
        self.amplitude, self.k = float(amplitude), int(wavenumber)

    def __call__(self, x):
        return self.amplitude * np.sin(2 * np.pi * self.k * np.asarray(x, dtype=float))


def parse_tilt(spec: str, t_end: float, nx: int = 128) -> TiltField:
    """Tilt presets: sin:amplitude,wavenumber (static) or file:path."""
    name, _, arg = spec.partition(":")
    if name == "file":
        return read_field_csv(arg, kind="tilt")
    if name == "sin":
        amp, k = arg.split(",")
        fn = SineTilt(float(amp), int(k))
        xs = core.torus_grid(nx)
        times = np.linspace(0.0, 2.0 * t_end, 9)
        return TiltField.gauge_fixed(times, xs, np.tile(fn(xs), (9, 1)))
    raise ValidationError(f"unknown tilt spec {spec!r}")


def cmd_girsanov(args, extra_defaults) -> int:
    cfg = resolve_config(args, extra_defaults)
    ctx = RunContext("girsanov", {**cfg, "seed": args.seed, "jobs": args.jobs},
                     args.out_dir)
    n = int(cfg["n"])
    t_end = float(cfg["t_end"])
    model = ModelSpec.bep(float(cfg["m"]))
    tilt = parse_tilt(cfg["h"], t_end)
    numerator = cfg["numerator"]
    simulate_under = cfg["simulate_under"]
    law = GammaLaw(theta=float(cfg["theta"]), m=float(cfg["m"]))

    def initial(rng: RandomStream) -> EnergyState:
        return sample_invariant_state(n, law, rng)

    records = dynamics.simulate_ensemble(
        model, initial, t_end, 2, int(cfg["ensemble"]), args.seed,
        tilt=tilt if simulate_under == "wabep" else None,
        jobs=args.jobs, keep_noise_log=True)
    log_weights = np.array([diagnostics.girsanov_log_weight(rec, tilt, numerator)
                            for rec in records])
    ctx.write_rows_csv("girsanov_weights.csv", ["traj", "log_weight"],
                       list(enumerate(log_weights)))
    ew = np.exp(log_weights)
    se = float(ew.std(ddof=1) / math.sqrt(ew.size)) if ew.size > 1 else 0.0
    ctx.write_json("girsanov_summary.json", {
        "numerator": numerator, "simulate_under": simulate_under,
        "mean_weight": float(ew.mean()), "se": se,
        "normalized_within_3se": bool(abs(ew.mean() - 1.0) <= 3.0 * se),
    })
    return 0


def cmd_ldp_eq(args, extra_defaults) -> int:
    cfg = resolve_config(args, extra_defaults)
    ctx = RunContext("ldp-eq", cfg, args.out_dir)
    res = diagnostics.equilibrium_tail_study(float(cfg["m"]), float(cfg["theta"]),
                                             float(cfg["c"]), _int_list(cfg["n_list"]))
    rows = [[int(n), v, res["rate_value"]]
            for n, v in zip(res["n"], res["minus_log_p_over_n"])]
    ctx.write_rows_csv("ldp_eq.csv", ["N", "minus_log_p_over_N", "rate_value"], rows)
    return 0


class _PsiOne:
    def __call__(self, x):
        return np.ones_like(np.asarray(x, dtype=float))


def cmd_replacement(args, extra_defaults) -> int:
    cfg = resolve_config(args, extra_defaults)
    ctx = RunContext("replacement", {**cfg, "seed": args.seed, "jobs": args.jobs},
                     args.out_dir)
    model = ModelSpec.bep(float(cfg["m"]))
    law = GammaLaw(theta=float(cfg["theta"]), m=float(cfg["m"]))
    eps = float(cfg["eps"])
    psi = CosineProfile(1.0, 0.5, 1)
    rows = []
    for n in _int_list(cfg["n_list"]):
        def initial(rng: RandomStream, _n=n) -> EnergyState:
            return sample_invariant_state(_n, law, rng)
        records = dynamics.simulate_ensemble(model, initial, float(cfg["t_end"]),
                                             int(cfg["snapshots"]), int(cfg["ensemble"]),
                                             args.seed, jobs=args.jobs)
        gaps = [diagnostics.replacement_gap(rec, psi, eps) for rec in records]
        rows.append([n, float(np.mean(gaps))])
    ctx.write_rows_csv("replacement.csv", ["N", "gap"], rows)
    ctx.write_json("replacement_summary.json", {
        "rows": rows,
        "monotone_decreasing": bool(all(rows[i][1] > rows[i + 1][1]
                                        for i in range(len(rows) - 1))),
    })
    return 0


class SquareMobility:
    def __call__(self, r):
        return np.asarray(r, dtype=float) ** 2


def cmd_bb(args, extra_defaults) -> int:
    cfg = resolve_config(args, extra_defaults)
    ctx = RunContext("bb", cfg, args.out_dir)
    alpha = SquareMobility()
    rows = []
    for m_amp in _int_list(cfg["amplifications"]):
        rho, flux = ldp.spike_translation_family(m_amp, nx=int(cfg["nx"]),
                                                 nt=int(cfg["nt"]))
        rows.append([m_amp, ldp.bb_action(rho, flux, alpha)])
    ctx.write_rows_csv("bb_actions.csv", ["M", "action"], rows)

    w0 = float(cfg["w0"])
    xs = core.torus_grid(64)
    times = np.linspace(0.0, 1.0, 9)
    const_rho = DensityField(times, xs, np.ones((9, 64)))
    analytic = ldp.bb_action(const_rho, np.full((9, 64), w0), alpha)
    ctx.write_json("bb_summary.json", {
        "actions": rows,
        "monotone_nonincreasing": bool(all(rows[i][1] >= rows[i + 1][1]
                                           for i in range(len(rows) - 1))),
        "constant_flux_action": analytic,
        "constant_flux_expected": w0 * w0,
    })
    return 0


def cmd_report_data(args, extra_defaults) -> int:
    """Generate the canned fixture set consumed by the report component."""
    cfg = resolve_config(args, extra_defaults)
    out = Path(args.out_dir)
    base = argparse.Namespace(seed=args.seed, jobs=args.jobs, config=None,
                              expect_digest=None)

    def sub(**kw):
        ns = argparse.Namespace(**vars(base))
        for k, v in kw.items():
            setattr(ns, k, v)
        return ns

    cmd_ldp_eq(sub(out_dir=str(out), m=None, theta=None, c=None, n_list="128,512,2048"),
               {"m": "2", "theta": "1", "c": "1.5", "n_list": "128,512,2048"})
    cmd_compare(sub(out_dir=str(out), model=None, m=None, a=None, n_list=None,
                    init=None, theta=None, t_end=None, ensemble=None, snapshots=None,
                    nx=None, nt=None),
                {"model": "bep", "m": "1", "a": "", "n_list": "8,16,32",
                 "init": "cosine:1,0.5,1", "theta": "1", "t_end": str(cfg["t_end"]),
                 "ensemble": "20", "snapshots": "6", "nx": "64", "nt": "33"})
    cmd_hydro(sub(out_dir=str(out), equation=None, d=None, a=None, init=None,
                  nx=None, nt=None, t_end=None, m=None, model=None, tilt=None),
              {"equation": "linear", "d": "1", "a": "", "init": "cosine:1,0.5,1",
               "nx": "64", "nt": "33", "t_end": str(cfg["t_end"]), "m": "1",
               "model": "bep", "tilt": ""})
    cmd_girsanov(sub(out_dir=str(out), n=None, m=None, theta=None, t_end=None,
                     ensemble=None, h=None, numerator=None, simulate_under=None),
                 {"n": "8", "m": "1", "theta": "1", "t_end": "0.01",
                  "ensemble": "200", "h": "sin:0.2,1", "numerator": "bep",
                  "simulate_under": "wabep"})
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_COMMANDS: dict[str, tuple] = {}


def _register(name: str, fn, options: dict[str, tuple]):
    _COMMANDS[name] = (fn, options)


_register("simulate", cmd_simulate, {
    "model": ("bep", "bep | gbep | kmp"),
    "m": ("1", "BEP drift parameter"),
    "a": ("", "GBEP rate preset (const:c | sqrt | linear:c)"),
    "n": ("64", "lattice sites"),
    "init": ("cosine:1,0.5,1", "const:c | cosine:mean,amp,k | file:path | invariant"),
    "theta": ("1", "temperature for invariant initial data"),
    "t_end": ("0.05", "final macroscopic time"),
    "ensemble": ("100", "number of trajectories"),
    "snapshots": ("11", "sample times per trajectory"),
})
_register("compare", cmd_compare, {
    "model": ("bep", "bep | gbep | kmp"),
    "m": ("1", "BEP drift parameter"),
    "a": ("", "GBEP rate preset"),
    "n_list": ("32,64,128", "comma-separated lattice sizes"),
    "init": ("cosine:1,0.5,1", "initial profile"),
    "theta": ("1", "temperature (invariant init only)"),
    "t_end": ("0.05", "final time"),
    "ensemble": ("100", "trajectories per size"),
    "snapshots": ("11", "sample times"),
    "nx": ("256", "reference grid points"),
    "nt": ("257", "reference time levels (rounded up to cover snapshots)"),
})
_register("hydro", cmd_hydro, {
    "equation": ("linear", "linear | nonlinear | tilted"),
    "d": ("1", "diffusivity (linear)"),
    "a": ("sqrt", "GBEP rate preset (nonlinear)"),
    "model": ("bep", "model for the tilted equation"),
    "m": ("1", "BEP drift parameter"),
    "tilt": ("", "tilt field CSV (tilted)"),
    "init": ("cosine:1,0.5,1", "initial profile"),
    "nx": ("256", "grid points"),
    "nt": ("513", "time levels"),
    "t_end": ("0.05", "final time"),
})
_register("tilt", cmd_tilt, {
    "field": ("", "target trajectory CSV (t,x,rho)"),
    "model": ("bep", "model kind"),
    "m": ("1", "BEP drift parameter"),
    "a": ("", "GBEP rate preset"),
})
_register("rate", cmd_rate, {
    "field": ("", "target trajectory CSV (t,x,rho)"),
    "model": ("bep", "model kind"),
    "m": ("1", "BEP drift parameter"),
    "a": ("", "GBEP rate preset"),
})
_register("girsanov", cmd_girsanov, {
    "n": ("8", "lattice sites"),
    "m": ("1", "BEP drift parameter"),
    "theta": ("1", "temperature of the initial invariant draw"),
    "t_end": ("0.01", "final time"),
    "ensemble": ("10000", "paths"),
    "h": ("sin:0.2,1", "tilt preset: sin:amp,k | file:path"),
    "numerator": ("bep", "weight numerator: bep | wabep"),
    "simulate_under": ("wabep", "generating measure: bep | wabep"),
})
_register("ldp-eq", cmd_ldp_eq, {
    "m": ("2", "shape parameter (x2)"),
    "theta": ("1", "temperature"),
    "c": ("1.5", "tail level (> rho0)"),
    "n_list": ("128,512,2048", "lattice sizes"),
})
_register("replacement", cmd_replacement, {
    "m": ("2", "BEP drift parameter"),
    "theta": ("1", "temperature"),
    "eps": ("0.05", "block radius fraction"),
    "n_list": ("64,128,256", "lattice sizes"),
    "t_end": ("0.02", "final time"),
    "ensemble": ("16", "trajectories per size"),
    "snapshots": ("21", "sample times"),
})
_register("bb", cmd_bb, {
    "amplifications": ("1,2,4,8", "spike amplification factors"),
    "nx": ("1024", "grid points"),
    "nt": ("513", "time levels"),
    "w0": ("0.5", "constant-flux analytic check value"),
})
_register("report-data", cmd_report_data, {
    "t_end": ("0.02", "time horizon for the fixture runs"),
})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heatlab",
        description="stochastic heat-conduction lattice lab: simulate, verify, weigh")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (fn, options) in _COMMANDS.items():
        p = sub.add_parser(name, help=next(iter(options.values()))[1] if options else "")
        p.add_argument("--seed", type=int, default=0, help="base RNG seed")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        p.add_argument("--out-dir", default=".", help="output directory")
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--expect-digest", default=None,
                       help="require input artifacts to carry this config digest")
        for key, (default, helptext) in options.items():
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None,
                           help=f"{helptext} (default {default})")
        p.set_defaults(func=fn, defaults={k: d for k, (d, _) in options.items()})
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, args.defaults)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except HeatLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
