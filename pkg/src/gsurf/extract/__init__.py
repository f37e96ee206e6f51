from .mesh import as_field, field_gradient, grid_values, marching_cubes, sdf_normal_map, unproject
from .metrics import SampledSurface, chamfer_distance, evaluate, nearest, normal_consistency, sample_mesh

__all__ = [
    "as_field", "field_gradient", "grid_values", "marching_cubes", "sdf_normal_map", "unproject",
    "SampledSurface", "chamfer_distance", "evaluate", "nearest", "normal_consistency", "sample_mesh",
]
