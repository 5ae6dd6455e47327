"""Latent-to-image generators, GAN training step and frozen checkpoint loading."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .patch_core import Patch


class CheckpointError(RuntimeError):
    """Raised when a generator checkpoint fails integrity or shape checks."""


@dataclass(frozen=True)
class LatentVector:
    """Generator input noise, optionally class-conditional."""

    z: torch.Tensor
    class_id: Optional[int] = None

    def __post_init__(self):
        if self.z.ndim != 1:
            raise ValueError(f"latent must be a flat vector, got shape {tuple(self.z.shape)}")
        if not bool(torch.isfinite(self.z).all()):
            raise ValueError("latent contains non-finite values")


class DcganGenerator(nn.Module):
    """Transposed-convolution generator from a latent vector to a tanh image."""

    def __init__(self, latent_dim: int = 100, base_channels: int = 64, out_size: int = 64):
        super().__init__()
        if out_size < 8 or out_size & (out_size - 1):
            raise ValueError(f"out_size must be a power of two >= 8, got {out_size}")
        self.latent_dim = latent_dim
        self.out_size = out_size
        n_up = int(math.log2(out_size)) - 2
        ch = base_channels * 2 ** (n_up - 1)
        blocks = [
            nn.ConvTranspose2d(latent_dim, ch, 4, stride=1, padding=0, bias=False),
            nn.BatchNorm2d(ch),
            nn.ReLU(inplace=False),
        ]
        for _ in range(n_up - 1):
            blocks += [
                nn.ConvTranspose2d(ch, ch // 2, 4, stride=2, padding=1, bias=False),
                nn.BatchNorm2d(ch // 2),
                nn.ReLU(inplace=False),
            ]
            ch //= 2
        blocks += [nn.ConvTranspose2d(ch, 3, 4, stride=2, padding=1, bias=False), nn.Tanh()]
        self.net = nn.Sequential(*blocks)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.net(z.view(z.shape[0], self.latent_dim, 1, 1))


class ConditionalGenerator(nn.Module):
    """Class-conditional variant: a learned class embedding is concatenated to z."""

    def __init__(self, latent_dim: int = 100, num_classes: int = 1000, embed_dim: int = 32,
                 base_channels: int = 64, out_size: int = 64):
        super().__init__()
        self.latent_dim = latent_dim
        self.num_classes = num_classes
        self.out_size = out_size
        self.embed = nn.Embedding(num_classes, embed_dim)
        self.body = DcganGenerator(latent_dim + embed_dim, base_channels, out_size)

    def forward(self, z: torch.Tensor, class_ids: torch.Tensor) -> torch.Tensor:
        return self.body(torch.cat([z, self.embed(class_ids)], dim=1))


class DcganDiscriminator(nn.Module):
    """Mirrored strided-convolution discriminator producing a real/fake logit."""

    def __init__(self, base_channels: int = 64, in_size: int = 64):
        super().__init__()
        if in_size < 8 or in_size & (in_size - 1):
            raise ValueError(f"in_size must be a power of two >= 8, got {in_size}")
        n_down = int(math.log2(in_size)) - 2
        blocks = [nn.Conv2d(3, base_channels, 4, stride=2, padding=1, bias=False),
                  nn.LeakyReLU(0.2, inplace=False)]
        ch = base_channels
        for _ in range(n_down - 1):
            blocks += [
                nn.Conv2d(ch, ch * 2, 4, stride=2, padding=1, bias=False),
                nn.BatchNorm2d(ch * 2),
                nn.LeakyReLU(0.2, inplace=False),
            ]
            ch *= 2
        blocks.append(nn.Conv2d(ch, 1, 4, stride=1, padding=0, bias=False))
        self.net = nn.Sequential(*blocks)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.net(images).view(-1)


def init_dcgan_weights(module: nn.Module, rng: torch.Generator) -> None:
    """Conventional DCGAN initialization drawn from an explicit generator."""
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                m.weight.copy_(torch.randn(m.weight.shape, generator=rng) * 0.02)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, nn.BatchNorm2d):
                m.weight.copy_(1.0 + torch.randn(m.weight.shape, generator=rng) * 0.02)
                m.bias.zero_()
            elif isinstance(m, nn.Embedding):
                m.weight.copy_(torch.randn(m.weight.shape, generator=rng) * 0.02)


@dataclass
class GeneratorHandle:
    """A generator module plus the metadata attacks need to drive it."""

    module: nn.Module
    kind: str  # "dcgan" | "conditional"
    latent_dim: int
    out_size: int
    base_channels: int
    trainable: bool
    num_classes: Optional[int] = None
    embed_dim: Optional[int] = None

    def freeze(self) -> "GeneratorHandle":
        self.module.eval()
        for p in self.module.parameters():
            p.requires_grad_(False)
        self.trainable = False
        return self


def to_unit_range(raw: torch.Tensor) -> torch.Tensor:
    """Map tanh output to [0, 1]."""
    return ((raw + 1.0) / 2.0).clamp(0.0, 1.0)


def generate(handle: GeneratorHandle, z) -> Patch:
    """Run the generator on one latent and return the output as a Patch.

    The forward pass runs in eval mode so patch generation never perturbs
    training-time statistics; gradients still flow to z (and to the
    parameters when the handle is trainable).
    """
    latent = z if isinstance(z, LatentVector) else LatentVector(z)
    if latent.z.shape[0] != handle.latent_dim:
        raise ValueError(f"latent dimension {latent.z.shape[0]} does not match "
                         f"generator dimension {handle.latent_dim}")
    if handle.num_classes is not None:
        if latent.class_id is None:
            raise ValueError("conditional generator requires a class_id on the latent")
        if not 0 <= latent.class_id < handle.num_classes:
            raise ValueError(f"class_id {latent.class_id} outside vocabulary of {handle.num_classes}")
    elif latent.class_id is not None:
        raise ValueError("class_id given but generator is unconditional")

    was_training = handle.module.training
    handle.module.eval()
    try:
        if handle.num_classes is None:
            raw = handle.module(latent.z.unsqueeze(0))
        else:
            raw = handle.module(latent.z.unsqueeze(0), torch.tensor([latent.class_id]))
    finally:
        handle.module.train(was_training)
    return Patch(to_unit_range(raw.squeeze(0)))


def sample_latent(latent_dim: int, rng: torch.Generator,
                  class_id: Optional[int] = None) -> LatentVector:
    return LatentVector(torch.randn(latent_dim, generator=rng), class_id=class_id)


@dataclass
class GanTrainState:
    """Generator/discriminator pair with their optimizers and loss history."""

    generator: DcganGenerator
    discriminator: DcganDiscriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    latent_dim: int
    epoch: int = 0
    d_losses: list = field(default_factory=list)
    g_losses: list = field(default_factory=list)

    @classmethod
    def create(cls, latent_dim: int = 100, base_channels: int = 64, out_size: int = 64,
               lr: float = 2e-4, betas: tuple[float, float] = (0.5, 0.999),
               seed: int = 0) -> "GanTrainState":
        rng = torch.Generator().manual_seed(seed)
        gen = DcganGenerator(latent_dim, base_channels, out_size)
        disc = DcganDiscriminator(base_channels, out_size)
        init_dcgan_weights(gen, rng)
        init_dcgan_weights(disc, rng)
        return cls(generator=gen, discriminator=disc,
                   opt_g=torch.optim.Adam(gen.parameters(), lr=lr, betas=betas),
                   opt_d=torch.optim.Adam(disc.parameters(), lr=lr, betas=betas),
                   latent_dim=latent_dim)

    def handle(self, trainable: bool = True) -> GeneratorHandle:
        base = self.generator.net[0].out_channels
        n_up = int(math.log2(self.generator.out_size)) - 2
        return GeneratorHandle(module=self.generator, kind="dcgan",
                               latent_dim=self.latent_dim, out_size=self.generator.out_size,
                               base_channels=base // 2 ** (n_up - 1), trainable=trainable)


def make_fake_batch(state: GanTrainState, n: int, rng: torch.Generator) -> torch.Tensor:
    """Fresh generator samples in [0, 1], graph attached for the G update."""
    z = torch.randn(n, state.latent_dim, generator=rng)
    return to_unit_range(state.generator(z))


def discriminator_update(state: GanTrainState, real_batch: torch.Tensor,
                         fake_batch: torch.Tensor) -> float:
    """One discriminator step on real vs detached fake samples."""
    state.opt_d.zero_grad()
    logits_real = state.discriminator(real_batch)
    logits_fake = state.discriminator(fake_batch.detach())
    loss = (F.binary_cross_entropy_with_logits(logits_real, torch.ones_like(logits_real))
            + F.binary_cross_entropy_with_logits(logits_fake, torch.zeros_like(logits_fake)))
    loss.backward()
    state.opt_d.step()
    value = float(loss.detach())
    state.d_losses.append(value)
    return value


def generator_update(state: GanTrainState, fake_batch: torch.Tensor) -> float:
    """One non-saturating generator step; the discriminator is left untouched."""
    state.opt_g.zero_grad()
    logits = state.discriminator(fake_batch)
    loss = F.binary_cross_entropy_with_logits(logits, torch.ones_like(logits))
    loss.backward()
    state.opt_g.step()
    value = float(loss.detach())
    state.g_losses.append(value)
    return value


def gan_train_step(state: GanTrainState, real_batch: torch.Tensor,
                   rng: torch.Generator) -> tuple[float, float]:
    """One discriminator update followed by one generator update.

    Uses the non-saturating binary cross-entropy objective; the same fake
    batch feeds both sub-updates, mirroring the usual DCGAN loop.
    """
    if real_batch.ndim != 4 or real_batch.shape[1] != 3:
        raise ValueError(f"real batch must have shape (N, 3, H, W), got {tuple(real_batch.shape)}")
    if real_batch.shape[0] < 1:
        raise ValueError("real batch must contain at least one image")
    fake = make_fake_batch(state, real_batch.shape[0], rng)
    d_loss = discriminator_update(state, real_batch, fake)
    g_loss = generator_update(state, fake)
    return d_loss, g_loss


def sample_real_batch(images: torch.Tensor, batch_size: int, rng: torch.Generator,
                      hflip: bool = False) -> torch.Tensor:
    """Draw a batch with replacement from a stacked (N, 3, H, W) corpus."""
    idx = torch.randint(images.shape[0], (batch_size,), generator=rng)
    batch = images[idx]
    if hflip:
        flips = torch.rand(batch_size, generator=rng) < 0.5
        batch = batch.clone()
        batch[flips] = torch.flip(batch[flips], dims=[-1])
    return batch


# -- checkpoints ----------------------------------------------------------


def parameter_digest(module: nn.Module) -> str:
    """SHA-256 over parameter and buffer names, shapes and bytes."""
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(str(tuple(tensor.shape)).encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def _arch_descriptor(handle: GeneratorHandle) -> dict:
    desc = {"kind": handle.kind, "latent_dim": handle.latent_dim, "out_size": handle.out_size,
            "base_channels": handle.base_channels}
    if handle.kind == "conditional":
        desc["num_classes"] = handle.num_classes
        desc["embed_dim"] = handle.embed_dim
    return desc


def build_generator_module(arch: dict) -> nn.Module:
    kind = arch.get("kind")
    if kind == "dcgan":
        return DcganGenerator(arch["latent_dim"], arch["base_channels"], arch["out_size"])
    if kind == "conditional":
        return ConditionalGenerator(arch["latent_dim"], arch["num_classes"],
                                    arch.get("embed_dim", 32), arch["base_channels"],
                                    arch["out_size"])
    raise CheckpointError(f"unknown generator architecture kind {kind!r}")


def save_generator_checkpoint(handle: GeneratorHandle, path,
                              extra: Optional[dict] = None) -> Path:
    """Write a self-describing checkpoint with an integrity digest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "arch": _arch_descriptor(handle),
        "state_dict": handle.module.state_dict(),
        "digest": parameter_digest(handle.module),
    }
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)
    return path


def load_pretrained(path) -> GeneratorHandle:
    """Load a generator checkpoint as a frozen (non-trainable) handle.

    The embedded digest is recomputed after loading; any mismatch or
    missing/misshapen parameter fails loudly rather than silently running
    with the wrong weights.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"generator checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    for key in ("arch", "state_dict", "digest"):
        if key not in payload:
            raise CheckpointError(f"checkpoint {path} missing field {key!r}")
    arch = payload["arch"]
    module = build_generator_module(arch)
    try:
        module.load_state_dict(payload["state_dict"])
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint {path} does not match declared architecture "
                              f"{arch}: {exc}") from exc
    digest = parameter_digest(module)
    if digest != payload["digest"]:
        raise CheckpointError(f"checkpoint {path} failed integrity check: "
                              f"stored digest {payload['digest'][:12]}..., "
                              f"recomputed {digest[:12]}...")
    handle = GeneratorHandle(module=module, kind=arch["kind"], latent_dim=arch["latent_dim"],
                             out_size=arch["out_size"], base_channels=arch["base_channels"],
                             trainable=True, num_classes=arch.get("num_classes"),
                             embed_dim=arch.get("embed_dim"))
    return handle.freeze()
