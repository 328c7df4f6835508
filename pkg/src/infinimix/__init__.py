"""Numerical experiments on mixing for infinite-measure-preserving maps of the line."""

__version__ = "0.1.0"

from .errors import InfinimixError  # noqa: E402

__all__ = ["InfinimixError", "__version__"]
