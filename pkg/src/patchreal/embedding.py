"""Perceptual patch embeddings from a frozen VGG-16 backbone.

Patches are embedded with the activation after the third conv+ReLU of
VGG-16's fourth convolutional block (relu4_3), flattened to a vector.
The backbone is frozen and run in eval mode, so embeddings are
deterministic. Inputs in [-1, 1] are remapped to the backbone's training
statistics internally.
"""

from __future__ import annotations

import numpy as np
import torch

from patchreal.patches import Patch

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# features[:23] of torchvision's VGG-16 ends right after relu4_3.
_RELU4_3_INDEX = 23
_PRETRAINED_ASSET = "vgg16-397923af.pth (torchvision VGG16_Weights.IMAGENET1K_V1)"


class SetupError(RuntimeError):
    """A required external asset (pretrained weights) is missing."""


def _build_backbone(weights: str, seed: int) -> torch.nn.Module:
    from torchvision import models

    if weights == "pretrained":
        try:
            vgg = models.vgg16(weights=models.VGG16_Weights.IMAGENET1K_V1)
        except Exception as exc:
            raise SetupError(
                f"pretrained backbone weights unavailable: {_PRETRAINED_ASSET}. "
                "Place the file under $TORCH_HOME/hub/checkpoints, or use "
                "PatchEncoder(weights='random', seed=...) for weight-independent "
                "workflows."
            ) from exc
    elif weights == "random":
        # fork_rng keeps construction from consuming the global RNG stream
        with torch.random.fork_rng():
            torch.manual_seed(0)
            vgg = models.vgg16(weights=None)
        gen = torch.Generator().manual_seed(seed)
        for p in vgg.parameters():
            p.data = torch.empty_like(p).normal_(0.0, 0.02, generator=gen)
    else:
        raise ValueError(f"weights must be 'pretrained' or 'random', got {weights!r}")
    return vgg.features[:_RELU4_3_INDEX]


class PatchEncoder:
    """Frozen relu4_3 feature extractor mapping patches to flat vectors.

    ``weights='pretrained'`` requires the torchvision ImageNet checkpoint
    on disk and raises SetupError naming the asset when absent.
    ``weights='random'`` draws a fixed seeded initialization instead;
    shape, determinism, and index-exactness contracts are identical, only
    match quality differs. The ``backbone_id`` distinguishes the two so an
    index built with one encoder is never queried with another.
    """

    layer_name = "relu4_3"

    def __init__(self, weights: str = "pretrained", seed: int = 0, device=None):
        self.device = torch.device(
            device if device is not None
            else ("cuda" if torch.cuda.is_available() else "cpu")
        )
        self._net = _build_backbone(weights, seed).to(self.device).eval()
        for p in self._net.parameters():
            p.requires_grad_(False)
        self.backbone_id = (
            f"vgg16_{self.layer_name}:imagenet"
            if weights == "pretrained"
            else f"vgg16_{self.layer_name}:random-seed{seed}"
        )
        mean = torch.tensor(IMAGENET_MEAN, device=self.device).view(1, 3, 1, 1)
        std = torch.tensor(IMAGENET_STD, device=self.device).view(1, 3, 1, 1)
        self._mean, self._std = mean, std

    def _forward(self, batch: torch.Tensor) -> torch.Tensor:
        # [-1, 1] -> [0, 1] -> backbone statistics
        batch = batch.to(self.device)
        batch = ((batch + 1.0) / 2.0 - self._mean) / self._std
        with torch.no_grad():
            feats = self._net(batch)
        return feats.flatten(start_dim=1)

    def embed(self, patch: Patch | torch.Tensor) -> np.ndarray:
        """Embed one patch into a flat float32 vector."""
        t = patch.data if isinstance(patch, Patch) else patch
        if t.ndim != 3 or t.shape[0] != 3:
            raise ValueError(f"expected a 3xSxS patch, got shape {tuple(t.shape)}")
        vec = self._forward(t.detach().unsqueeze(0))[0]
        out = vec.cpu().numpy().astype(np.float32, copy=False)
        if not np.all(np.isfinite(out)):
            raise ValueError("embedding contains non-finite values")
        return out

    def embed_batch(self, patches: list[Patch], batch_size: int = 16) -> np.ndarray:
        """Embed many patches at once; rows follow input order."""
        if not patches:
            raise ValueError("no patches to embed")
        chunks = []
        for i in range(0, len(patches), batch_size):
            batch = torch.stack(
                [p.data.detach() for p in patches[i : i + batch_size]], dim=0
            )
            chunks.append(self._forward(batch).cpu().numpy())
        out = np.concatenate(chunks, axis=0).astype(np.float32, copy=False)
        if not np.all(np.isfinite(out)):
            raise ValueError("embedding contains non-finite values")
        return out

    def output_dim(self, patch_size: int) -> int:
        """Embedding dimensionality for a given square patch size."""
        probe = torch.zeros(1, 3, patch_size, patch_size, device=self.device)
        return int(self._forward(probe).shape[1])

    @classmethod
    def from_backbone_id(cls, backbone_id: str, device=None) -> "PatchEncoder":
        """Reconstruct the encoder an index manifest names."""
        prefix = f"vgg16_{cls.layer_name}:"
        if not backbone_id.startswith(prefix):
            raise ValueError(f"unrecognized backbone id {backbone_id!r}")
        variant = backbone_id[len(prefix):]
        if variant == "imagenet":
            return cls(weights="pretrained", device=device)
        if variant.startswith("random-seed"):
            return cls(weights="random", seed=int(variant[len("random-seed"):]), device=device)
        raise ValueError(f"unrecognized backbone id {backbone_id!r}")
