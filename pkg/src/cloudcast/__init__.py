"""Point-cloud depth-view casting and zero-shot open-world inference."""

__version__ = "0.1.0"

from .pointcloud import (  # noqa: F401
    PointCloud,
    load_point_cloud,
    normalize_unit_cube,
    sample_points,
    save_point_cloud,
)
from .projection import (  # noqa: F401
    DepthMap,
    GridConfig,
    ProjectionRecord,
    VoxelGrid,
    densify,
    project_views,
    quantize,
    smooth,
    squeeze,
)
from .views import ViewSet, ViewTransform, apply_view, make_view_set  # noqa: F401

__all__ = [
    "PointCloud",
    "load_point_cloud",
    "save_point_cloud",
    "normalize_unit_cube",
    "sample_points",
    "GridConfig",
    "VoxelGrid",
    "DepthMap",
    "ProjectionRecord",
    "quantize",
    "densify",
    "smooth",
    "squeeze",
    "project_views",
    "ViewTransform",
    "ViewSet",
    "make_view_set",
    "apply_view",
]
