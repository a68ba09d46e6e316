"""detcurate: evaluation and curation toolkit for detection datasets."""

from .datamodel import (
    BBox,
    Category,
    Dataset,
    DatasetParseError,
    DatasetValidationError,
    Detection,
    GroundTruthAnnotation,
    ImageRecord,
    MaskRLE,
    load_dataset,
    load_detections,
    save_dataset,
    validate,
)
from .geometry import (
    BitMask,
    box_iou,
    mask_area,
    mask_iou,
    relative_mask_size,
    rle_decode,
    rle_encode,
    union_box,
)
from .metrics import EvalConfig, EvalReport, evaluate, format_report_table
from .stats import (
    ClassDistribution,
    SplitSpec,
    class_distribution,
    mask_size_distribution,
    scale_performance_correlation,
    stratified_split,
)

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "BitMask",
    "Category",
    "ClassDistribution",
    "Dataset",
    "DatasetParseError",
    "DatasetValidationError",
    "Detection",
    "EvalConfig",
    "EvalReport",
    "GroundTruthAnnotation",
    "ImageRecord",
    "MaskRLE",
    "SplitSpec",
    "box_iou",
    "class_distribution",
    "evaluate",
    "format_report_table",
    "load_dataset",
    "load_detections",
    "mask_area",
    "mask_iou",
    "mask_size_distribution",
    "relative_mask_size",
    "rle_decode",
    "rle_encode",
    "save_dataset",
    "scale_performance_correlation",
    "stratified_split",
    "union_box",
    "validate",
]
