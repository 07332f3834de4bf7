"""Standalone feed-forward enhancement of synthetic images.

Inference needs nothing but the generator checkpoint: no index, no
discriminator, no auxiliary render buffers. Images keep their native
resolution; dimensions not divisible by 8 are reflect-padded up to the
next multiple for the forward pass and cropped back on write.
"""

from __future__ import annotations

from pathlib import Path

import torch
import torch.nn.functional as F

from patchreal.data import (
    IMAGE_EXTENSIONS,
    ImageTensor,
    as_tensor,
    load_image,
    preprocess,
    save_image,
)
from patchreal.networks import Generator, load_checkpoint

RESOLUTION_POLICIES = ("pad", "strict")


def pad_to_multiple(t: torch.Tensor, multiple: int = 8) -> tuple[torch.Tensor, tuple[int, int]]:
    """Reflect-pad the bottom/right edges up to the next multiple.

    Returns the padded tensor and the original (H, W) so the output can be
    cropped back.
    """
    h, w = int(t.shape[-2]), int(t.shape[-1])
    pad_h = (-h) % multiple
    pad_w = (-w) % multiple
    if pad_h == 0 and pad_w == 0:
        return t, (h, w)
    squeeze = t.ndim == 3
    if squeeze:
        t = t.unsqueeze(0)
    # reflect requires pad < dim; fall back for degenerate tiny inputs
    mode = "reflect" if pad_h < h and pad_w < w else "replicate"
    t = F.pad(t, (0, pad_w, 0, pad_h), mode=mode)
    return (t.squeeze(0) if squeeze else t), (h, w)


def enhance_image(
    generator: Generator,
    img: ImageTensor | torch.Tensor,
    resolution_policy: str = "pad",
) -> torch.Tensor:
    """Run one image through the generator, handling non-divisible sizes."""
    if resolution_policy not in RESOLUTION_POLICIES:
        raise ValueError(
            f"resolution_policy must be one of {RESOLUTION_POLICIES}, "
            f"got {resolution_policy!r}"
        )
    t = as_tensor(img)
    if resolution_policy == "pad":
        padded, (h, w) = pad_to_multiple(t)
    else:
        padded, (h, w) = t, (int(t.shape[-2]), int(t.shape[-1]))
    with torch.no_grad():
        out = generator(padded)
    return out[..., :h, :w]


def enhance(
    checkpoint: str | Path,
    inputs: str | Path | list,
    out_dir: str | Path,
    resolution_policy: str = "pad",
    device=None,
) -> list[Path]:
    """Enhance a directory (or list) of images with a trained checkpoint.

    Each input is normalized at its native resolution, translated, mapped
    back to 8-bit, and written under ``out_dir`` with the same stem.
    Loading verifies the checkpoint's config hash against this code and
    refuses mismatches.
    """
    device = torch.device(
        device if device is not None
        else ("cuda" if torch.cuda.is_available() else "cpu")
    )
    generator, _ = load_checkpoint(checkpoint, device=device)

    if isinstance(inputs, (str, Path)):
        in_dir = Path(inputs)
        if not in_dir.is_dir():
            raise FileNotFoundError(f"input directory does not exist: {in_dir}")
        files = sorted(
            p for p in in_dir.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS
        )
    else:
        files = [Path(p) for p in inputs]

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for path in files:
        img = load_image(path)
        w, h = img.size
        tensor = preprocess(img, (h, w), source_id=str(path)).data.to(device)
        out = enhance_image(generator, tensor, resolution_policy)
        written.append(save_image(out, out_dir / f"{path.stem}.png"))
    return written
