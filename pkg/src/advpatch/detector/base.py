"""Detector adapter interface, box utilities and gradient plumbing."""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch
import torch.nn.functional as F
import torchvision


class GradientUnsupportedError(RuntimeError):
    """Raised when a gradient is requested from a non-differentiable detector."""


@dataclass(frozen=True)
class Detection:
    """One detector output box in original image pixel coordinates."""

    bbox: tuple[float, float, float, float]  # x1, y1, x2, y2
    class_id: int
    objectness: float
    class_prob: float

    def __post_init__(self):
        x1, y1, x2, y2 = self.bbox
        if not (x1 < x2 and y1 < y2):
            raise ValueError(f"degenerate bbox {self.bbox}")
        for name, p in (("objectness", self.objectness), ("class_prob", self.class_prob)):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")

    @property
    def confidence(self) -> float:
        return self.objectness * self.class_prob

    def center(self) -> tuple[float, float]:
        x1, y1, x2, y2 = self.bbox
        return ((x1 + x2) / 2.0, (y1 + y2) / 2.0)


@dataclass(frozen=True)
class GroundTruthLabel:
    bbox: tuple[float, float, float, float]  # x1, y1, x2, y2
    class_id: int


@dataclass(frozen=True)
class LetterboxInfo:
    """Parameters of a letterbox mapping, used to invert box coordinates."""

    scale: float
    pad_x: float
    pad_y: float
    original_height: int
    original_width: int


def letterbox(image: torch.Tensor, size: int, pad_value: float = 0.5) -> tuple[torch.Tensor, LetterboxInfo]:
    """Resize an image to fit a square side, padding the rest with gray.

    Aspect ratio is preserved; the resize is bilinear so gradients flow
    back to the source image.
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"image must have shape (3, H, W), got {tuple(image.shape)}")
    h, w = int(image.shape[1]), int(image.shape[2])
    scale = size / max(h, w)
    new_h = max(1, round(h * scale))
    new_w = max(1, round(w * scale))
    if (new_h, new_w) != (h, w):
        resized = F.interpolate(image.unsqueeze(0), size=(new_h, new_w), mode="bilinear",
                                align_corners=False).squeeze(0)
    else:
        resized = image
    pad_x = (size - new_w) / 2.0
    pad_y = (size - new_h) / 2.0
    left, top = int(pad_x), int(pad_y)
    right, bottom = size - new_w - left, size - new_h - top
    padded = F.pad(resized, (left, right, top, bottom), value=pad_value)
    return padded, LetterboxInfo(scale=scale, pad_x=left, pad_y=top, original_height=h, original_width=w)


def unletterbox_boxes(boxes: torch.Tensor, info: LetterboxInfo) -> torch.Tensor:
    """Map (N, 4) xyxy boxes from letterboxed coordinates back to the original image."""
    out = boxes.clone()
    out[:, [0, 2]] = (out[:, [0, 2]] - info.pad_x) / info.scale
    out[:, [1, 3]] = (out[:, [1, 3]] - info.pad_y) / info.scale
    out[:, [0, 2]] = out[:, [0, 2]].clamp(0.0, info.original_width)
    out[:, [1, 3]] = out[:, [1, 3]].clamp(0.0, info.original_height)
    return out


def nms_per_class(boxes: torch.Tensor, scores: torch.Tensor, class_ids: torch.Tensor,
                  iou_threshold: float) -> torch.Tensor:
    """Indices kept by class-wise non-maximum suppression, sorted by score."""
    if boxes.numel() == 0:
        return torch.empty(0, dtype=torch.long)
    keep = torchvision.ops.batched_nms(boxes, scores, class_ids, iou_threshold)
    return keep


class DetectorAdapter(ABC):
    """Uniform interface over object detectors.

    detect() and vanish_loss() run the same preprocessing, so attacks that
    optimize the loss are evaluated consistently. Adapters are immutable
    after construction and safe to call concurrently.
    """

    input_size: int
    class_names: tuple[str, ...]
    conf_threshold: float
    nms_iou: float
    supports_gradient: bool = True

    @abstractmethod
    def detect(self, image: torch.Tensor) -> list[Detection]:
        """Thresholded, NMS-filtered detections in original image coordinates."""

    @abstractmethod
    def vanish_loss(self, image: torch.Tensor,
                    labels: Sequence[GroundTruthLabel] = ()) -> torch.Tensor:
        """Differentiable scalar whose minimization suppresses all objectness."""

    @abstractmethod
    def objectness_map(self, image: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """All objectness scores and their box centers in original image coordinates.

        Returns (scores, centers) with shapes (N,) and (N, 2).
        """


def image_gradient(adapter: DetectorAdapter, image: torch.Tensor,
                   labels: Sequence[GroundTruthLabel] = ()) -> torch.Tensor:
    """Gradient of the adapter loss with respect to the image pixels."""
    if not adapter.supports_gradient:
        raise GradientUnsupportedError(
            f"{type(adapter).__name__} does not expose gradients; attack requires a differentiable detector"
        )
    leaf = image.detach().clone().requires_grad_(True)
    loss = adapter.vanish_loss(leaf, labels)
    (grad,) = torch.autograd.grad(loss, leaf)
    return grad


def objectness_near(adapter: DetectorAdapter, image: torch.Tensor,
                    center: tuple[float, float], radius: float) -> float:
    """Mean objectness of boxes whose center lies within a radius of a point."""
    with torch.no_grad():
        scores, centers = adapter.objectness_map(image)
    cx, cy = center
    dist = torch.sqrt((centers[:, 0] - cx) ** 2 + (centers[:, 1] - cy) ** 2)
    mask = dist <= radius
    if not bool(mask.any()):
        return 0.0
    return float(scores[mask].mean())


def default_proximity_radius(image_height: int, image_width: int, base: float = 150.0,
                             base_resolution: float = 416.0) -> float:
    """Proximity radius scaled from the 150 px default at 416 x 416."""
    return base * max(image_height, image_width) / base_resolution


def detections_to_coco(detections_by_image: dict[int, Sequence[Detection]],
                       category_ids: Sequence[int] | None = None) -> list[dict]:
    """Convert detections to COCO results records (bbox as [x, y, w, h])."""
    records = []
    for image_id, dets in detections_by_image.items():
        for det in dets:
            x1, y1, x2, y2 = det.bbox
            cat = det.class_id if category_ids is None else category_ids[det.class_id]
            records.append({
                "image_id": int(image_id),
                "category_id": int(cat),
                "bbox": [float(x1), float(y1), float(x2 - x1), float(y2 - y1)],
                "score": float(det.confidence),
            })
    return records


def write_coco_results(detections_by_image: dict[int, Sequence[Detection]], path,
                       category_ids: Sequence[int] | None = None) -> None:
    Path(path).write_text(json.dumps(detections_to_coco(detections_by_image, category_ids), indent=2))


def load_class_names(path) -> tuple[str, ...]:
    """Read a class vocabulary file, one name per line."""
    lines = Path(path).read_text().splitlines()
    return tuple(line.strip() for line in lines if line.strip())
