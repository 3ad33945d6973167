"""Readers for the documented heatlab artifact schemas.

Only the public file formats (docs/formats.md in the main package) are
touched here; there is no import of the simulation code, so figures can be
rendered anywhere the CSV/JSON artifacts land.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np


class SchemaError(ValueError):
    """Input artifact does not match its documented schema."""


def read_comments(path) -> dict[str, str]:
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


def check_digest(path, expected: str | None):
    if not expected:
        return
    found = read_comments(path).get("config_digest", "<none>")
    if found != expected:
        raise SchemaError(f"{path}: config digest {found} does not match expected {expected}")


def read_table(path, expected_header: list[str]) -> dict[str, np.ndarray]:
    """CSV with a known header (after `#` comment lines) into float columns."""
    with open(path, newline="") as fh:
        raw = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(raw)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError(f"{path}: empty file") from None
    if header != expected_header:
        raise SchemaError(f"{path}: expected columns {expected_header}, found {header}")
    rows = [row for row in reader if row]
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    cols = np.array([[float(v) for v in row] for row in rows])
    return {name: cols[:, j] for j, name in enumerate(header)}


def read_field(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """`t,x,<value>` CSV into (times, xs, values[nt, nx])."""
    with open(path, newline="") as fh:
        raw = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(raw)
    header = [h.strip() for h in next(reader)]
    if len(header) != 3 or header[:2] != ["t", "x"]:
        raise SchemaError(f"{path}: expected a t,x,<value> field CSV, found {header}")
    rows = [row for row in reader if row]
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    ts = np.array([float(r[0]) for r in rows])
    xs = np.array([float(r[1]) for r in rows])
    vals = np.array([float(r[2]) for r in rows])
    times = np.unique(ts)
    grid = np.unique(xs)
    if times.size * grid.size != len(rows):
        raise SchemaError(f"{path}: rows do not form a complete (t, x) grid")
    values = np.empty((times.size, grid.size))
    values[np.searchsorted(times, ts), np.searchsorted(grid, xs)] = vals
    return times, grid, values


def read_trajectories(path) -> dict[int, dict]:
    """Ensemble trajectory CSV `traj,snapshot,t,i,z` into per-path arrays."""
    cols = read_table(path, ["traj", "snapshot", "t", "i", "z"])
    out: dict[int, dict] = {}
    trajs = cols["traj"].astype(int)
    snaps = cols["snapshot"].astype(int)
    sites = cols["i"].astype(int)
    for p in np.unique(trajs):
        mask = trajs == p
        n_snap = snaps[mask].max() + 1
        n_sites = sites[mask].max() + 1
        z = np.empty((n_snap, n_sites))
        z[snaps[mask], sites[mask]] = cols["z"][mask]
        times = np.empty(n_snap)
        times[snaps[mask]] = cols["t"][mask]
        out[int(p)] = {"times": times, "energies": z}
    return out


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from None
