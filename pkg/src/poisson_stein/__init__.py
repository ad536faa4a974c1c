"""Computable Malliavin-Stein bounds for Poisson functionals.

Modules: :mod:`point_process` (sampling, thinning, random streams),
:mod:`functionals` (first chaos, kNN, Voronoi, shot noise),
:mod:`malliavin` (difference and Mehler operators), :mod:`stein_bounds`,
:mod:`variance_tools`, :mod:`clt_harness` and the :mod:`cli` runner.
"""

__version__ = "0.1.0"

from .point_process import (  # noqa: E402
    ConfigurationTooLarge,
    DomainError,
    IntensityModel,
    MarkMeasure,
    PointConfiguration,
    RngStream,
    Window,
    add_points,
    sample_poisson,
    superpose,
    thin,
)

__all__ = [
    "__version__", "ConfigurationTooLarge", "DomainError", "IntensityModel", "MarkMeasure",
    "PointConfiguration", "RngStream", "Window", "add_points", "sample_poisson", "superpose", "thin",
]
