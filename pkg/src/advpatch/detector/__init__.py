"""Object detector adapters with a shared differentiable interface."""

from .base import (
    Detection,
    DetectorAdapter,
    GradientUnsupportedError,
    GroundTruthLabel,
    LetterboxInfo,
    default_proximity_radius,
    detections_to_coco,
    image_gradient,
    letterbox,
    load_class_names,
    nms_per_class,
    objectness_near,
    unletterbox_boxes,
    write_coco_results,
)
from .mock import CELL_STRIDE, MockDetector
from .yolov3 import COCO80_CLASS_NAMES, YoloV3Adapter

__all__ = [
    "CELL_STRIDE",
    "COCO80_CLASS_NAMES",
    "Detection",
    "DetectorAdapter",
    "GradientUnsupportedError",
    "GroundTruthLabel",
    "LetterboxInfo",
    "MockDetector",
    "YoloV3Adapter",
    "default_proximity_radius",
    "detections_to_coco",
    "image_gradient",
    "letterbox",
    "load_class_names",
    "nms_per_class",
    "objectness_near",
    "unletterbox_boxes",
    "write_coco_results",
]
