"""Figure rendering for mpsim experiment outputs."""

from .figures import FIGURES, FigureSpec, MissingColumnError, render, render_all

__version__ = "0.1.0"

__all__ = ["FIGURES", "FigureSpec", "MissingColumnError", "render", "render_all",
           "__version__"]
