"""The five figure kinds, rendered deterministically.

Every renderer takes a FigureSpec, reads only documented artifact schemas,
and returns a RenderResult with the series count actually drawn.  Styles are
pinned (no rc inheritance) and savefig metadata is scrubbed, so re-rendering
the same inputs is byte-identical for a fixed matplotlib version.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from heatlab_report.io import (  # noqa: E402
    SchemaError,
    check_digest,
    read_field,
    read_table,
    read_trajectories,
)

KINDS = ("profile-overlay", "convergence", "tail-rate", "histogram", "kymograph")

_STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 110,
    "savefig.dpi": 150,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
    "svg.hashsalt": "heatlab-report",
    "axes.prop_cycle": plt.cycler(color=[
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]),
}


@dataclass(frozen=True)
class FigureSpec:
    """One figure: input artifact(s), kind, output path, labels."""

    kind: str
    inputs: tuple[str, ...]
    output: str
    title: str = ""
    labels: tuple[str, ...] = ()
    expect_digest: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; expected one of {KINDS}")
        if not self.inputs:
            raise SchemaError("figure needs at least one input file")
        object.__setattr__(self, "inputs", tuple(str(p) for p in self.inputs))
        object.__setattr__(self, "labels", tuple(self.labels))


@dataclass(frozen=True)
class RenderResult:
    kind: str
    output: str
    n_series: int


def render(spec: FigureSpec) -> RenderResult:
    """Render one figure to spec.output (format from the file suffix)."""
    for path in spec.inputs:
        if not Path(path).exists():
            raise SchemaError(f"input file not found: {path}")
        if path.endswith(".csv"):
            check_digest(path, spec.expect_digest)
    with plt.rc_context(_STYLE):
        fig, n_series = _RENDERERS[spec.kind](spec)
        try:
            fig.savefig(spec.output, metadata=_scrubbed_metadata(spec.output))
        finally:
            plt.close(fig)
    return RenderResult(kind=spec.kind, output=spec.output, n_series=n_series)


def _scrubbed_metadata(output: str) -> dict:
    if output.endswith(".svg"):
        return {"Date": None}
    if output.endswith(".png"):
        return {"Software": "heatlab-report"}
    return {}


def _label(spec: FigureSpec, idx: int, fallback: str) -> str:
    return spec.labels[idx] if idx < len(spec.labels) else fallback


def _render_profile_overlay(spec: FigureSpec):
    """Final-snapshot ensemble-mean profiles (one trajectories.csv per N)
    overlaid on the PDE field's matching profile (last input)."""
    if len(spec.inputs) < 2:
        raise SchemaError("profile-overlay needs trajectory CSV(s) plus a field CSV")
    fig, ax = plt.subplots()
    n_series = 0
    for idx, path in enumerate(spec.inputs[:-1]):
        paths = read_trajectories(path)
        stack = np.stack([rec["energies"][-1] for rec in paths.values()])
        n_sites = stack.shape[1]
        xs = (np.arange(n_sites) + 1.0) / n_sites
        ax.plot(xs, stack.mean(axis=0), marker=".", markersize=3, linewidth=1.0,
                label=_label(spec, idx, f"N = {n_sites} (mean of {len(paths)} paths)"))
        n_series += 1
    times, xs, values = read_field(spec.inputs[-1])
    ax.plot(xs, values[-1], color="black", linewidth=1.6, linestyle="--",
            label=_label(spec, len(spec.inputs) - 1, f"PDE, t = {times[-1]:g}"))
    n_series += 1
    ax.set_xlabel("x")
    ax.set_ylabel("energy density")
    ax.set_title(spec.title or "empirical profiles vs PDE")
    ax.legend()
    return fig, n_series


def _render_convergence(spec: FigureSpec):
    """Weak error versus lattice size from compare_weak_errors.csv, log-log."""
    cols = read_table(spec.inputs[0], ["N", "weak_error"])
    fig, ax = plt.subplots()
    ax.loglog(cols["N"], cols["weak_error"], marker="o",
              label=_label(spec, 0, "weak error"))
    ax.set_xlabel("N")
    ax.set_ylabel("weak error")
    ax.set_title(spec.title or "hydrodynamic convergence")
    ax.legend()
    return fig, 1


def _render_tail_rate(spec: FigureSpec):
    """-(1/N) log P points with the horizontal static-rate line."""
    cols = read_table(spec.inputs[0], ["N", "minus_log_p_over_N", "rate_value"])
    rate = cols["rate_value"][0]
    fig, ax = plt.subplots()
    ax.semilogx(cols["N"], cols["minus_log_p_over_N"], marker="o", linestyle="",
                label=_label(spec, 0, "-(1/N) log P"))
    ax.axhline(rate, color="#d62728", linewidth=1.2,
               label=_label(spec, 1, f"rate = {rate:.6f}"))
    ax.set_xlabel("N")
    ax.set_ylabel("tail exponent")
    ax.set_title(spec.title or "equilibrium tail rate")
    ax.legend()
    return fig, int(cols["N"].size) + 1  # one point per N, plus the rate line


def _render_histogram(spec: FigureSpec):
    """Histogram of exponentiated Girsanov log-weights, unit mean marked."""
    cols = read_table(spec.inputs[0], ["traj", "log_weight"])
    weights = np.exp(cols["log_weight"])
    fig, ax = plt.subplots()
    ax.hist(weights, bins=40, color="#1f77b4", alpha=0.8,
            label=_label(spec, 0, f"exp(log W), {weights.size} paths"))
    ax.axvline(1.0, color="#d62728", linewidth=1.4, label=_label(spec, 1, "mean 1"))
    ax.set_xlabel("path weight")
    ax.set_ylabel("count")
    ax.set_title(spec.title or "Girsanov weights")
    ax.legend()
    return fig, 2


def _render_kymograph(spec: FigureSpec):
    """Space-time heat map of a density field CSV."""
    times, xs, values = read_field(spec.inputs[0])
    fig, ax = plt.subplots()
    mesh = ax.pcolormesh(xs, times, values, shading="nearest", cmap="inferno",
                         rasterized=True)
    fig.colorbar(mesh, ax=ax, label=_label(spec, 0, "density"))
    ax.set_xlabel("x")
    ax.set_ylabel("t")
    ax.set_title(spec.title or "temperature kymograph")
    return fig, 1


_RENDERERS = {
    "profile-overlay": _render_profile_overlay,
    "convergence": _render_convergence,
    "tail-rate": _render_tail_rate,
    "histogram": _render_histogram,
    "kymograph": _render_kymograph,
}
