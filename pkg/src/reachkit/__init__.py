"""reachkit: reach, medial axis and extrinsic curvature bounds for compact
submanifolds of model Riemannian spaces."""

from . import ambient, cli, errors, immersion, reach, scenarios, variation
from .ambient import AmbientSpace, Box, GeodesicPath, Point, Tangent
from .immersion import Immersion, IntrinsicCurve, TangentFrame
from .reach import FootPointSet, ReachAssigner, ReachEstimate
from .variation import BoundReport, CurvatureIntegral, DefectReport, VariationField

__version__ = "0.1.0"

__all__ = [
    "ambient", "immersion", "reach", "variation", "scenarios", "cli", "errors",
    "AmbientSpace", "Box", "Point", "Tangent", "GeodesicPath",
    "Immersion", "TangentFrame", "IntrinsicCurve",
    "FootPointSet", "ReachEstimate", "ReachAssigner",
    "VariationField", "CurvatureIntegral", "BoundReport", "DefectReport",
    "__version__",
]
