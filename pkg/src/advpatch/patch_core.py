"""Patch representation, compositing, robustness transforms and regularizers."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Union

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image


class PlacementError(ValueError):
    """Raised when a patch placement does not fit inside the target image."""


@dataclass(frozen=True)
class Patch:
    """A small RGB pixel grid in [0, 1], stored channels-first.

    The wrapped tensor may carry gradients; all operations in this module
    are differentiable with respect to it (clamping is differentiable
    almost everywhere).
    """

    data: torch.Tensor  # (3, H, W) float tensor, values in [0, 1]

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != 3:
            raise ValueError(f"patch must have shape (3, H, W), got {tuple(self.data.shape)}")
        if self.data.shape[1] < 1 or self.data.shape[2] < 1:
            raise ValueError("patch sides must be at least 1 pixel")
        if not self.data.dtype.is_floating_point:
            raise ValueError("patch tensor must be floating point")
        with torch.no_grad():
            lo = float(self.data.min())
            hi = float(self.data.max())
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValueError("patch contains non-finite values")
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"patch values must lie in [0, 1], got range [{lo}, {hi}]")

    @property
    def height(self) -> int:
        return int(self.data.shape[1])

    @property
    def width(self) -> int:
        return int(self.data.shape[2])

    @classmethod
    def random(cls, height: int, width: int, rng: torch.Generator) -> "Patch":
        return cls(torch.rand((3, height, width), generator=rng))

    @classmethod
    def constant(cls, height: int, width: int, value: float = 0.0) -> "Patch":
        return cls(torch.full((3, height, width), float(value)))

    @classmethod
    def from_array(cls, array: np.ndarray) -> "Patch":
        """Build from an H x W x 3 array in [0, 1]."""
        if array.ndim != 3 or array.shape[2] != 3:
            raise ValueError(f"expected H x W x 3 array, got {array.shape}")
        return cls(torch.from_numpy(np.ascontiguousarray(array)).permute(2, 0, 1).float())

    def numpy(self) -> np.ndarray:
        """Return an H x W x 3 float copy."""
        return self.data.detach().cpu().permute(1, 2, 0).numpy().copy()

    def detached(self) -> "Patch":
        return Patch(self.data.detach().clone())


@dataclass(frozen=True)
class Placement:
    """Top-left anchor and render size of a patch inside an image."""

    x: int
    y: int
    height: int
    width: int

    def __post_init__(self):
        if self.x < 0 or self.y < 0:
            raise PlacementError(f"placement anchor must be non-negative, got ({self.x}, {self.y})")
        if self.height < 1 or self.width < 1:
            raise PlacementError("placement render size must be at least 1x1")

    def validate_for(self, image_height: int, image_width: int) -> None:
        if self.x + self.width > image_width or self.y + self.height > image_height:
            raise PlacementError(
                f"placement (x={self.x}, y={self.y}, h={self.height}, w={self.width}) "
                f"exceeds image bounds {image_width}x{image_height}"
            )

    def center(self) -> tuple[float, float]:
        return (self.x + self.width / 2.0, self.y + self.height / 2.0)


@dataclass(frozen=True)
class TransformConfig:
    """Sampling ranges for the robustness transformations.

    Contrast is a multiplicative scalar, brightness an additive scalar and
    noise an additive per-pixel grid; all are drawn uniformly from their
    ranges at every application.
    """

    contrast: tuple[float, float] = (0.8, 1.2)
    brightness: tuple[float, float] = (-0.1, 0.1)
    noise: tuple[float, float] = (-0.1, 0.1)

    def __post_init__(self):
        for name in ("contrast", "brightness", "noise"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range must satisfy lo <= hi, got [{lo}, {hi}]")


def _as_tensor(patch: Union[Patch, torch.Tensor]) -> torch.Tensor:
    return patch.data if isinstance(patch, Patch) else patch


def resize_patch(pixels: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Bilinear resize of a (3, H, W) tensor, align-corners off."""
    if pixels.shape[1] == height and pixels.shape[2] == width:
        return pixels
    resized = F.interpolate(
        pixels.unsqueeze(0), size=(height, width), mode="bilinear", align_corners=False
    ).squeeze(0)
    return resized.clamp(0.0, 1.0)


def apply_patch(
    image: torch.Tensor, patch: Union[Patch, torch.Tensor], placement: Placement
) -> torch.Tensor:
    """Composite a patch onto an image at a fixed placement.

    The patch is bilinearly resized to the placement render size when the
    sizes differ. Pixels outside the placement rectangle are returned
    unchanged; inside the rectangle the output equals the (resized) patch.
    Gradients propagate to the patch pixels.
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"image must have shape (3, H, W), got {tuple(image.shape)}")
    placement.validate_for(int(image.shape[1]), int(image.shape[2]))
    pixels = resize_patch(_as_tensor(patch), placement.height, placement.width)
    out = image.clone()
    out[:, placement.y : placement.y + placement.height, placement.x : placement.x + placement.width] = pixels
    return out


def transform_patch(
    patch: Union[Patch, torch.Tensor], config: TransformConfig, rng: torch.Generator
) -> Patch:
    """Apply random contrast, brightness and noise to a patch.

    Output is clamp(c * p + b + n, 0, 1) with scalar c and b and a
    per-pixel noise grid n, all sampled uniformly from the config ranges.
    Deterministic given the generator state.
    """
    pixels = _as_tensor(patch)

    def _uniform(shape, lo, hi):
        return torch.rand(shape, generator=rng) * (hi - lo) + lo

    contrast = _uniform((), *config.contrast)
    brightness = _uniform((), *config.brightness)
    noise = _uniform(pixels.shape, *config.noise)
    return Patch((contrast * pixels + brightness + noise).clamp(0.0, 1.0))


def latent_shift(value, mask: torch.Tensor, alpha: float):
    """Interpolate a patch or latent with a random mask of the same shape.

    Returns (1 - alpha) * value + alpha * mask, reprojected to [0, 1] when
    the input is a Patch. Latents pass through without projection.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    base = _as_tensor(value)
    if base.shape != mask.shape:
        raise ValueError(f"mask shape {tuple(mask.shape)} does not match value shape {tuple(base.shape)}")
    mixed = (1.0 - alpha) * base + alpha * mask
    if isinstance(value, Patch):
        return Patch(mixed.clamp(0.0, 1.0))
    return mixed


def total_variation(patch: Union[Patch, torch.Tensor]) -> torch.Tensor:
    """Anisotropic L1 total variation, summed over channels.

    Zero for constant patches; differentiable almost everywhere.
    """
    pixels = _as_tensor(patch)
    dy = torch.abs(pixels[..., 1:, :] - pixels[..., :-1, :]).sum()
    dx = torch.abs(pixels[..., :, 1:] - pixels[..., :, :-1]).sum()
    return dy + dx


def config_hash(config: dict) -> str:
    """Stable short hash of a JSON-serializable configuration mapping."""
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_patch(patch: Patch, path, *, seed: int | None = None,
               training_config_hash: str | None = None, extra: dict | None = None) -> FsPath:
    """Write a patch as 8-bit RGB PNG plus a JSON metadata sidecar."""
    path = FsPath(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    array = np.clip(np.rint(patch.numpy() * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(array, mode="RGB").save(path, format="PNG")
    meta = {
        "height": patch.height,
        "width": patch.width,
        "seed": seed,
        "training_config_hash": training_config_hash,
    }
    if extra:
        meta.update(extra)
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_patch(path) -> tuple[Patch, dict]:
    """Load a PNG patch and its metadata sidecar (empty dict when absent)."""
    path = FsPath(path)
    with Image.open(path) as img:
        array = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    meta_path = path.with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return Patch.from_array(array), meta
