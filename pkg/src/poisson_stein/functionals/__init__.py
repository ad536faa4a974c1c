"""Library of Poisson functionals and the name-addressable registry."""

from .base import (
    DegenerateFunctional,
    Family,
    FunctionalSpec,
    build,
    constant_functional,
    extensions,
    get_family,
    register,
    registry,
)
from .first_chaos import first_chaos, rescaled_poisson
from .knn import KnnParams, knn_edge_power, knn_edge_power_value, knn_stabilization_radius
from .shot_noise import (
    PHIS,
    Kernel,
    ShotNoiseGrid,
    ShotNoiseParams,
    field_function,
    sampling_model,
    shot_noise_functional,
)
from .voronoi import (
    VoronoiParams,
    default_padding,
    voronoi_edge_length,
    voronoi_statistic,
    voronoi_vertex_count,
)

__all__ = [
    "DegenerateFunctional", "Family", "FunctionalSpec", "build", "constant_functional", "extensions",
    "get_family", "register", "registry", "first_chaos", "rescaled_poisson", "KnnParams",
    "knn_edge_power", "knn_edge_power_value", "knn_stabilization_radius", "PHIS", "Kernel",
    "ShotNoiseGrid", "ShotNoiseParams", "field_function", "sampling_model", "shot_noise_functional",
    "VoronoiParams", "default_padding", "voronoi_edge_length", "voronoi_statistic", "voronoi_vertex_count",
]
