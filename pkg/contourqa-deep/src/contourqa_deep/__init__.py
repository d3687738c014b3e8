"""ResNet-152 feature export sidecar for the contourqa toolkit."""

from .backbone import FEATURE_DIM, SEEDED_WEIGHTS, WeightsError, load_backbone
from .extractor import SCHEMA_ID, SidecarConfig, extract_deep, run_export

__all__ = [
    "FEATURE_DIM",
    "SEEDED_WEIGHTS",
    "SCHEMA_ID",
    "SidecarConfig",
    "WeightsError",
    "extract_deep",
    "load_backbone",
    "run_export",
]
