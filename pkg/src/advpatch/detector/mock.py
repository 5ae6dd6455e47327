"""Tiny differentiable grid detector for desk-scale attack experiments."""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .base import (
    Detection,
    DetectorAdapter,
    GroundTruthLabel,
    LetterboxInfo,
    letterbox,
    nms_per_class,
    unletterbox_boxes,
)

# Three stride-2 convolutions: one grid cell per 8 x 8 pixel block.
CELL_STRIDE = 8


class MockDetector(nn.Module, DetectorAdapter):
    """Three-layer convolutional predictor over a square cell grid.

    Each cell carries an objectness logit and class logits; the cell box is
    the 8 x 8 pixel block it covers. The vanish loss is the sum of squared
    objectness activations, which makes finite-difference checks and
    closed-form step oracles practical.
    """

    def __init__(self, input_size: int = 64,
                 class_names: Sequence[str] = ("person", "bicycle", "car"),
                 conf_threshold: float = 0.5, nms_iou: float = 0.45,
                 hidden: tuple[int, int] = (8, 16), seed: int = 0):
        super().__init__()
        if input_size % CELL_STRIDE != 0:
            raise ValueError(f"input_size must be a multiple of {CELL_STRIDE}, got {input_size}")
        self.input_size = input_size
        self.class_names = tuple(class_names)
        self.conf_threshold = conf_threshold
        self.nms_iou = nms_iou
        self.grid = input_size // CELL_STRIDE

        c1, c2 = hidden
        self.conv1 = nn.Conv2d(3, c1, kernel_size=3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(c1, c2, kernel_size=3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(c2, 1 + len(self.class_names), kernel_size=3, stride=2, padding=1)
        self._init_weights(seed)
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)

    def _init_weights(self, seed: int) -> None:
        # Moderate gain keeps objectness responsive to pixel changes
        # instead of saturating the sigmoid.
        rng = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for conv in (self.conv1, self.conv2, self.conv3):
                fan_in = conv.weight.shape[1] * conv.weight.shape[2] * conv.weight.shape[3]
                std = (2.0 / fan_in) ** 0.5
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=rng) * std)
                conv.bias.copy_(torch.randn(conv.bias.shape, generator=rng) * 0.1)

    def _preprocess(self, image: torch.Tensor) -> tuple[torch.Tensor, LetterboxInfo]:
        if image.ndim != 3 or image.shape[0] != 3:
            raise ValueError(f"image must have shape (3, H, W), got {tuple(image.shape)}")
        return letterbox(image, self.input_size)

    def _head(self, image: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, LetterboxInfo]:
        """Objectness (g, g) and class probabilities (C, g, g) on the cell grid."""
        boxed, info = self._preprocess(image)
        h = F.relu(self.conv1(boxed.unsqueeze(0)))
        h = F.relu(self.conv2(h))
        out = self.conv3(h).squeeze(0)
        objectness = torch.sigmoid(out[0])
        class_probs = torch.softmax(out[1:], dim=0)
        return objectness, class_probs, info

    def _cell_boxes(self) -> torch.Tensor:
        """(g*g, 4) xyxy cell boxes in letterboxed input coordinates."""
        g = self.grid
        ys, xs = torch.meshgrid(torch.arange(g), torch.arange(g), indexing="ij")
        x1 = (xs * CELL_STRIDE).reshape(-1).float()
        y1 = (ys * CELL_STRIDE).reshape(-1).float()
        return torch.stack([x1, y1, x1 + CELL_STRIDE, y1 + CELL_STRIDE], dim=1)

    def detect(self, image: torch.Tensor) -> list[Detection]:
        with torch.no_grad():
            objectness, class_probs, info = self._head(image)
        obj = objectness.reshape(-1)
        probs = class_probs.reshape(len(self.class_names), -1)
        best_prob, best_class = probs.max(dim=0)
        conf = obj * best_prob
        mask = conf > self.conf_threshold
        if not bool(mask.any()):
            return []
        boxes = unletterbox_boxes(self._cell_boxes()[mask], info)
        keep = nms_per_class(boxes, conf[mask], best_class[mask], self.nms_iou)
        detections = []
        obj_m, prob_m, cls_m = obj[mask], best_prob[mask], best_class[mask]
        for i in keep.tolist():
            x1, y1, x2, y2 = boxes[i].tolist()
            if x2 <= x1 or y2 <= y1:
                continue
            detections.append(Detection(bbox=(x1, y1, x2, y2), class_id=int(cls_m[i]),
                                        objectness=float(obj_m[i]), class_prob=float(prob_m[i])))
        return detections

    def vanish_loss(self, image: torch.Tensor,
                    labels: Sequence[GroundTruthLabel] = ()) -> torch.Tensor:
        if labels:
            raise NotImplementedError("only the empty-label (object vanishing) loss is supported")
        objectness, _, _ = self._head(image)
        return (objectness ** 2).sum()

    def objectness_map(self, image: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        objectness, _, info = self._head(image)
        boxes = unletterbox_boxes(self._cell_boxes(), info)
        centers = torch.stack([(boxes[:, 0] + boxes[:, 2]) / 2.0,
                               (boxes[:, 1] + boxes[:, 3]) / 2.0], dim=1)
        return objectness.reshape(-1), centers
