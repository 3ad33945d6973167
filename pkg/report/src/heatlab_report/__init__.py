"""Figure rendering for heatlab experiment artifacts."""

from heatlab_report.figures import KINDS, FigureSpec, RenderResult, render
from heatlab_report.io import SchemaError

__all__ = ["KINDS", "FigureSpec", "RenderResult", "SchemaError", "render"]

__version__ = "0.1.0"
