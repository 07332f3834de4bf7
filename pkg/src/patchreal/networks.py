"""Generator and patch discriminator architectures.

The generator is a compact U-Net: three stride-2 encoder stages (64, 128,
256 channels, instance norm everywhere except after the first
convolution), a bottleneck of four channel-preserving residual blocks,
and a mirrored decoder of transposed convolutions with channel-wise skip
concatenations from the matching encoder stages, ending in Tanh.

The discriminator is fully convolutional and scores local texture: three
stride-2 layers (64, 128, 256, LeakyReLU 0.2, instance norm except on the
first) and a stride-1 head that emits a single-channel realism map. No
output activation: the adversarial objective regresses map cells to
{0, 1} targets.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

# bump when the layer recipe changes so stale checkpoints are refused
ARCHITECTURE_VERSION = 1


class CheckpointMismatchError(RuntimeError):
    """Checkpoint manifest does not match the current architecture."""


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 3
    encoder_channels: tuple[int, int, int] = (64, 128, 256)
    bottleneck_blocks: int = 4
    decoder_channels: tuple[int, int] = (128, 64)
    out_channels: int = 3
    norm_affine: bool = True

    def config_hash(self) -> str:
        payload = {"arch": "generator", "version": ARCHITECTURE_VERSION, **asdict(self)}
        return _hash_payload(payload)


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 3
    channels: tuple[int, int, int] = (64, 128, 256)
    leaky_slope: float = 0.2
    norm_affine: bool = True

    def config_hash(self) -> str:
        payload = {
            "arch": "discriminator",
            "version": ARCHITECTURE_VERSION,
            **asdict(self),
        }
        return _hash_payload(payload)


def _hash_payload(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class ResidualBlock(nn.Module):
    """Channel-preserving 3x3 conv pair with an identity skip.

    out = z + IN(conv(ReLU(IN(conv(z))))); with all conv weights and norm
    biases at zero the block is the identity.
    """

    def __init__(self, channels: int, norm_affine: bool = True):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.norm1 = nn.InstanceNorm2d(channels, affine=norm_affine)
        self.conv2 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.norm2 = nn.InstanceNorm2d(channels, affine=norm_affine)

    def forward(self, z):
        return z + self.norm2(self.conv2(F.relu(self.norm1(self.conv1(z)))))


class Generator(nn.Module):
    """U-Net-style image translator; output shape equals input shape."""

    def __init__(self, config: GeneratorConfig | None = None):
        super().__init__()
        cfg = config or GeneratorConfig()
        self.config = cfg
        c1, c2, c3 = cfg.encoder_channels
        d3, d2 = cfg.decoder_channels
        affine = cfg.norm_affine

        self.enc1 = nn.Conv2d(cfg.in_channels, c1, 4, 2, 1)  # no norm on first layer
        self.enc2 = nn.Conv2d(c1, c2, 4, 2, 1)
        self.enc2_norm = nn.InstanceNorm2d(c2, affine=affine)
        self.enc3 = nn.Conv2d(c2, c3, 4, 2, 1)
        self.enc3_norm = nn.InstanceNorm2d(c3, affine=affine)

        self.bottleneck = nn.Sequential(
            *[ResidualBlock(c3, affine) for _ in range(cfg.bottleneck_blocks)]
        )

        self.dec3 = nn.ConvTranspose2d(c3, d3, 4, 2, 1)
        self.dec3_norm = nn.InstanceNorm2d(d3, affine=affine)
        self.dec2 = nn.ConvTranspose2d(d3 + c2, d2, 4, 2, 1)
        self.dec2_norm = nn.InstanceNorm2d(d2, affine=affine)
        self.head = nn.ConvTranspose2d(d2 + c1, cfg.out_channels, 4, 2, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.ndim == 3
        if squeeze:
            x = x.unsqueeze(0)
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(f"expected Nx{self.config.in_channels}xHxW input, got {tuple(x.shape)}")
        h, w = int(x.shape[2]), int(x.shape[3])
        if h % 8 != 0 or w % 8 != 0:
            raise ValueError(
                f"input height and width must be divisible by 8 "
                f"(three stride-2 stages), got {h}x{w}"
            )

        e1 = F.relu(self.enc1(x))
        e2 = F.relu(self.enc2_norm(self.enc2(e1)))
        e3 = F.relu(self.enc3_norm(self.enc3(e2)))
        m = self.bottleneck(e3)
        d3 = F.relu(self.dec3_norm(self.dec3(m)))
        d2 = F.relu(self.dec2_norm(self.dec2(torch.cat([d3, e2], dim=1))))
        out = torch.tanh(self.head(torch.cat([d2, e1], dim=1)))
        return out.squeeze(0) if squeeze else out


class Discriminator(nn.Module):
    """Patch-level realism scorer: image in, 2-D map of unbounded scores out."""

    MIN_INPUT = 16

    def __init__(self, config: DiscriminatorConfig | None = None):
        super().__init__()
        cfg = config or DiscriminatorConfig()
        self.config = cfg
        c1, c2, c3 = cfg.channels

        self.conv1 = nn.Conv2d(cfg.in_channels, c1, 4, 2, 1)  # no norm on first layer
        self.conv2 = nn.Conv2d(c1, c2, 4, 2, 1)
        self.norm2 = nn.InstanceNorm2d(c2, affine=cfg.norm_affine)
        self.conv3 = nn.Conv2d(c2, c3, 4, 2, 1)
        self.norm3 = nn.InstanceNorm2d(c3, affine=cfg.norm_affine)
        self.head = nn.Conv2d(c3, 1, 4, 1, 1)

    def forward(self, p: torch.Tensor) -> torch.Tensor:
        squeeze = p.ndim == 3
        if squeeze:
            p = p.unsqueeze(0)
        if p.ndim != 4 or p.shape[1] != self.config.in_channels:
            raise ValueError(f"expected Nx{self.config.in_channels}xHxW input, got {tuple(p.shape)}")
        if p.shape[2] < self.MIN_INPUT or p.shape[3] < self.MIN_INPUT:
            raise ValueError(
                f"discriminator input must be at least "
                f"{self.MIN_INPUT}x{self.MIN_INPUT}, got {p.shape[2]}x{p.shape[3]}"
            )
        slope = self.config.leaky_slope
        h1 = F.leaky_relu(self.conv1(p), slope)
        h2 = F.leaky_relu(self.norm2(self.conv2(h1)), slope)
        h3 = F.leaky_relu(self.norm3(self.conv3(h2)), slope)
        out = self.head(h3)
        return out.squeeze(0) if squeeze else out


def init_weights(net: nn.Module, seed: int) -> nn.Module:
    """Seeded Gaussian(0, 0.02) initialization, in place.

    Conv kernels draw from N(0, 0.02) with zero bias; affine norm layers
    draw their scale from N(1, 0.02) with zero shift. The same seed always
    reproduces bitwise-identical parameters.
    """
    gen = torch.Generator().manual_seed(seed)
    for module in net.modules():
        if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
            module.weight.data = torch.empty_like(module.weight).normal_(
                0.0, 0.02, generator=gen
            )
            if module.bias is not None:
                module.bias.data.zero_()
        elif isinstance(module, nn.InstanceNorm2d) and module.affine:
            module.weight.data = torch.empty_like(module.weight).normal_(
                1.0, 0.02, generator=gen
            )
            module.bias.data.zero_()
    return net


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def save_checkpoint(
    generator: Generator,
    path: str | Path,
    seed: int | None = None,
    epoch: int | None = None,
    step: int | None = None,
    discriminator: Discriminator | None = None,
) -> Path:
    """Write a weight archive plus a JSON sidecar manifest.

    The manifest carries the config, its hash, seed/epoch/step, and the
    parameter count, so any tool can inspect a checkpoint without loading
    tensors, and loading refuses archives from a different architecture.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    archive = {"generator": generator.state_dict()}
    manifest = {
        "format": "patchreal-checkpoint",
        "architecture_version": ARCHITECTURE_VERSION,
        "generator_config": asdict(generator.config),
        "generator_config_hash": generator.config.config_hash(),
        "parameter_count": count_parameters(generator),
        "seed": seed,
        "epoch": epoch,
        "step": step,
    }
    if discriminator is not None:
        archive["discriminator"] = discriminator.state_dict()
        manifest["discriminator_config"] = asdict(discriminator.config)
        manifest["discriminator_config_hash"] = discriminator.config.config_hash()
        manifest["discriminator_parameter_count"] = count_parameters(discriminator)
    torch.save(archive, path)
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=1))
    return path


def load_checkpoint(
    path: str | Path, device="cpu", with_discriminator: bool = False
):
    """Load a checkpoint, verifying the manifest hash against this code.

    Raises CheckpointMismatchError when the stored config hash differs
    from the hash this code computes for the stored config: the archive
    was produced by a different architecture revision and running it
    would silently misbehave.
    """
    path = Path(path)
    manifest_path = path.with_suffix(".json")
    if not manifest_path.is_file():
        raise FileNotFoundError(f"checkpoint manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())

    cfg_dict = dict(manifest["generator_config"])
    cfg_dict["encoder_channels"] = tuple(cfg_dict["encoder_channels"])
    cfg_dict["decoder_channels"] = tuple(cfg_dict["decoder_channels"])
    config = GeneratorConfig(**cfg_dict)
    if config.config_hash() != manifest["generator_config_hash"]:
        raise CheckpointMismatchError(
            f"checkpoint {path} was produced by a different architecture revision "
            f"(manifest hash {manifest['generator_config_hash']}, "
            f"current {config.config_hash()}); refusing to run"
        )

    archive = torch.load(path, map_location=device, weights_only=True)
    generator = Generator(config).to(device)
    generator.load_state_dict(archive["generator"])
    generator.eval()
    if not with_discriminator:
        return generator, manifest

    d_cfg = dict(manifest["discriminator_config"])
    d_cfg["channels"] = tuple(d_cfg["channels"])
    discriminator = Discriminator(DiscriminatorConfig(**d_cfg)).to(device)
    discriminator.load_state_dict(archive["discriminator"])
    return generator, discriminator, manifest
