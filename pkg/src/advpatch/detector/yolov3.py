"""YOLOv3 reference adapter: standard architecture, frozen inference-only weights."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .base import (
    Detection,
    DetectorAdapter,
    GroundTruthLabel,
    letterbox,
    nms_per_class,
    unletterbox_boxes,
)

COCO80_CLASS_NAMES = (
    "person", "bicycle", "car", "motorbike", "aeroplane", "bus", "train", "truck", "boat",
    "traffic light", "fire hydrant", "stop sign", "parking meter", "bench", "bird", "cat",
    "dog", "horse", "sheep", "cow", "elephant", "bear", "zebra", "giraffe", "backpack",
    "umbrella", "handbag", "tie", "suitcase", "frisbee", "skis", "snowboard", "sports ball",
    "kite", "baseball bat", "baseball glove", "skateboard", "surfboard", "tennis racket",
    "bottle", "wine glass", "cup", "fork", "knife", "spoon", "bowl", "banana", "apple",
    "sandwich", "orange", "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair",
    "sofa", "pottedplant", "bed", "diningtable", "toilet", "tvmonitor", "laptop", "mouse",
    "remote", "keyboard", "cell phone", "microwave", "oven", "toaster", "sink",
    "refrigerator", "book", "clock", "vase", "scissors", "teddy bear", "hair drier",
    "toothbrush",
)

_ANCHORS = {
    32: ((116, 90), (156, 198), (373, 326)),
    16: ((30, 61), (62, 45), (59, 119)),
    8: ((10, 13), (16, 30), (33, 23)),
}


def _layout(num_classes: int) -> list[dict]:
    """Layer list mirroring the standard 106-layer YOLOv3 network."""
    out_ch = 3 * (5 + num_classes)
    layers: list[dict] = []

    def conv(filters, size, stride=1, bn=True):
        layers.append({"type": "conv", "filters": filters, "size": size, "stride": stride, "bn": bn})

    def residual(filters):
        conv(filters // 2, 1)
        conv(filters, 3)
        layers.append({"type": "shortcut", "from": -3})

    conv(32, 3)
    conv(64, 3, stride=2)
    residual(64)
    conv(128, 3, stride=2)
    for _ in range(2):
        residual(128)
    conv(256, 3, stride=2)
    for _ in range(8):
        residual(256)
    conv(512, 3, stride=2)
    for _ in range(8):
        residual(512)
    conv(1024, 3, stride=2)
    for _ in range(4):
        residual(1024)

    for filters, stride, route_back in ((512, 32, None), (256, 16, 61), (128, 8, 36)):
        if route_back is not None:
            layers.append({"type": "route", "layers": [-4]})
            conv(filters, 1)
            layers.append({"type": "upsample"})
            layers.append({"type": "route", "layers": [-1, route_back]})
        for _ in range(3):
            conv(filters, 1)
            conv(filters * 2, 3)
        conv(out_ch, 1, bn=False)
        layers.append({"type": "yolo", "stride": stride})
    return layers


class _YoloNet(nn.Module):
    """Module list built from the layout, producing raw maps at three scales."""

    def __init__(self, num_classes: int):
        super().__init__()
        self.num_classes = num_classes
        self.layout = _layout(num_classes)
        self.blocks = nn.ModuleList()
        channels = [3]
        for spec in self.layout:
            kind = spec["type"]
            if kind == "conv":
                in_ch = channels[-1]
                mods = [nn.Conv2d(in_ch, spec["filters"], spec["size"], stride=spec["stride"],
                                  padding=spec["size"] // 2, bias=not spec["bn"])]
                if spec["bn"]:
                    mods.append(nn.BatchNorm2d(spec["filters"]))
                    mods.append(nn.LeakyReLU(0.1, inplace=False))
                self.blocks.append(nn.Sequential(*mods))
                channels.append(spec["filters"])
            elif kind == "shortcut":
                self.blocks.append(nn.Identity())
                channels.append(channels[-1])
            elif kind == "route":
                # channels[j + 1] holds the output width of layer j
                refs = [len(channels) + o if o < 0 else o + 1 for o in spec["layers"]]
                self.blocks.append(nn.Identity())
                channels.append(sum(channels[r] for r in refs))
            elif kind == "upsample":
                self.blocks.append(nn.Upsample(scale_factor=2, mode="nearest"))
                channels.append(channels[-1])
            elif kind == "yolo":
                self.blocks.append(nn.Identity())
                channels.append(channels[-1])
            else:  # pragma: no cover
                raise AssertionError(kind)

    def forward(self, x: torch.Tensor) -> list[tuple[torch.Tensor, int]]:
        outputs: list[torch.Tensor] = []
        maps: list[tuple[torch.Tensor, int]] = []
        for idx, (spec, block) in enumerate(zip(self.layout, self.blocks)):
            kind = spec["type"]
            if kind in ("conv", "upsample"):
                x = block(x)
            elif kind == "shortcut":
                x = outputs[-1] + outputs[idx + spec["from"]]
            elif kind == "route":
                refs = [idx + o if o < 0 else o for o in spec["layers"]]
                parts = [outputs[r] for r in refs]
                x = parts[0] if len(parts) == 1 else torch.cat(parts, dim=1)
            elif kind == "yolo":
                maps.append((x, spec["stride"]))
            outputs.append(x)
        return maps


class YoloV3Adapter(DetectorAdapter):
    """YOLOv3 detector behind the uniform adapter interface.

    Weights come from an external file (darknet binary format or a torch
    checkpoint); training the detector is out of scope, so parameters are
    frozen and the net stays in eval mode.
    """

    def __init__(self, weights: str | Path | None = None,
                 class_names: Sequence[str] = COCO80_CLASS_NAMES,
                 input_size: int = 416, conf_threshold: float = 0.5, nms_iou: float = 0.45):
        if input_size % 32 != 0:
            raise ValueError(f"input_size must be a multiple of 32, got {input_size}")
        self.input_size = input_size
        self.class_names = tuple(class_names)
        self.conf_threshold = conf_threshold
        self.nms_iou = nms_iou
        self.net = _YoloNet(len(self.class_names))
        if weights is not None:
            self.load_weights(weights)
        self.net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)

    # -- weights ---------------------------------------------------------

    def load_weights(self, path: str | Path) -> None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"detector weights file not found: {path}")
        if path.suffix in (".pt", ".pth"):
            payload = torch.load(path, map_location="cpu", weights_only=True)
            state = payload.get("state_dict", payload)
            self.net.load_state_dict(state)
        else:
            self._load_darknet(path)

    def _load_darknet(self, path: Path) -> None:
        """Read the sequential float32 darknet weights format."""
        with open(path, "rb") as fh:
            major, minor, _rev = np.fromfile(fh, dtype=np.int32, count=3)
            seen_dtype = np.int64 if major * 10 + minor >= 2 else np.int32
            np.fromfile(fh, dtype=seen_dtype, count=1)
            weights = np.fromfile(fh, dtype=np.float32)
        ptr = 0

        def take(tensor: torch.Tensor) -> int:
            nonlocal ptr
            n = tensor.numel()
            if ptr + n > len(weights):
                raise ValueError(
                    f"weights file {path} exhausted at parameter offset {ptr}: "
                    f"architecture expects more values"
                )
            with torch.no_grad():
                tensor.copy_(torch.from_numpy(weights[ptr:ptr + n]).view_as(tensor))
            return n

        for spec, block in zip(self.net.layout, self.net.blocks):
            if spec["type"] != "conv":
                continue
            conv = block[0]
            if spec["bn"]:
                bn = block[1]
                for t in (bn.bias, bn.weight, bn.running_mean, bn.running_var):
                    ptr += take(t)
            else:
                ptr += take(conv.bias)
            ptr += take(conv.weight)
        if ptr != len(weights):
            raise ValueError(
                f"weights file {path} has {len(weights)} values but the architecture "
                f"consumed {ptr}; wrong file for this configuration"
            )

    def save_checkpoint(self, path: str | Path) -> None:
        torch.save({"arch": {"num_classes": len(self.class_names), "input_size": self.input_size},
                    "state_dict": self.net.state_dict()}, path)

    # -- inference -------------------------------------------------------

    def _decode(self, image: torch.Tensor):
        """Boxes (N, 4) in letterboxed coords, objectness and class logits (N,), (N, C)."""
        boxed, info = letterbox(image, self.input_size)
        maps = self.net(boxed.unsqueeze(0))
        boxes_all, obj_all, cls_all = [], [], []
        for raw, stride in maps:
            anchors = _ANCHORS[stride]
            g = raw.shape[-1]
            head = raw.view(len(anchors), 5 + len(self.class_names), g, g).permute(0, 2, 3, 1)
            ys, xs = torch.meshgrid(torch.arange(g, dtype=raw.dtype),
                                    torch.arange(g, dtype=raw.dtype), indexing="ij")
            cx = (torch.sigmoid(head[..., 0]) + xs) * stride
            cy = (torch.sigmoid(head[..., 1]) + ys) * stride
            anchor_t = torch.tensor(anchors, dtype=raw.dtype)
            bw = torch.exp(head[..., 2]) * anchor_t[:, 0].view(-1, 1, 1)
            bh = torch.exp(head[..., 3]) * anchor_t[:, 1].view(-1, 1, 1)
            boxes = torch.stack([cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2], dim=-1)
            boxes_all.append(boxes.reshape(-1, 4))
            obj_all.append(head[..., 4].reshape(-1))
            cls_all.append(head[..., 5:].reshape(-1, len(self.class_names)))
        return torch.cat(boxes_all), torch.cat(obj_all), torch.cat(cls_all), info

    def detect(self, image: torch.Tensor) -> list[Detection]:
        with torch.no_grad():
            boxes, obj_logits, cls_logits, info = self._decode(image)
        obj = torch.sigmoid(obj_logits)
        cls = torch.sigmoid(cls_logits)
        best_prob, best_class = cls.max(dim=1)
        conf = obj * best_prob
        mask = conf > self.conf_threshold
        if not bool(mask.any()):
            return []
        kept_boxes = unletterbox_boxes(boxes[mask], info)
        keep = nms_per_class(kept_boxes, conf[mask], best_class[mask], self.nms_iou)
        obj_m, prob_m, cls_m = obj[mask], best_prob[mask], best_class[mask]
        detections = []
        for i in keep.tolist():
            x1, y1, x2, y2 = kept_boxes[i].tolist()
            if x2 <= x1 or y2 <= y1:
                continue
            detections.append(Detection(bbox=(x1, y1, x2, y2), class_id=int(cls_m[i]),
                                        objectness=float(obj_m[i]), class_prob=float(prob_m[i])))
        return detections

    def vanish_loss(self, image: torch.Tensor,
                    labels: Sequence[GroundTruthLabel] = ()) -> torch.Tensor:
        if labels:
            raise NotImplementedError("only the empty-label (object vanishing) loss is supported")
        _, obj_logits, _, _ = self._decode(image)
        return F.binary_cross_entropy_with_logits(obj_logits, torch.zeros_like(obj_logits),
                                                  reduction="sum")

    def objectness_map(self, image: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        boxes, obj_logits, _, info = self._decode(image)
        boxes = unletterbox_boxes(boxes, info)
        centers = torch.stack([(boxes[:, 0] + boxes[:, 2]) / 2.0,
                               (boxes[:, 1] + boxes[:, 3]) / 2.0], dim=1)
        return torch.sigmoid(obj_logits), centers
