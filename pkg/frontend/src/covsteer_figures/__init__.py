"""Figure rendering for covariance steering run exports."""

from .figures import FIGURES, FigureSpec, render, sigma_scatter_data
from .geometry import ellipse_boundary
from .io import SchemaError

__version__ = "0.1.0"
