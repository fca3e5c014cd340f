"""Brain tumor segmentation toolkit: preprocessing, MedNeXt inference,
postprocessing, challenge metrics and a desk-scale training kit."""

__version__ = "0.1.0"

from .volcore import (
    REGIONS,
    GeometryError,
    InvalidLabelError,
    LabelMap,
    MultiModalImage,
    RegionMasks,
    RegionProbs,
    Volume3,
    enforce_hierarchy,
    labels_to_regions,
    regions_to_labels,
)

__all__ = [
    "REGIONS",
    "GeometryError",
    "InvalidLabelError",
    "LabelMap",
    "MultiModalImage",
    "RegionMasks",
    "RegionProbs",
    "Volume3",
    "__version__",
    "enforce_hierarchy",
    "labels_to_regions",
    "regions_to_labels",
]
