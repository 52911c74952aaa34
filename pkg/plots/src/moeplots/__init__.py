"""Figure rendering for simulator CSV reports and routing traces."""

from moeplots.figures import FIGURE_KINDS, FigureSpec, SchemaError, render

__all__ = ["FIGURE_KINDS", "FigureSpec", "SchemaError", "render"]
