"""Patch geometry: fixed-grid extraction of non-overlapping crops.

Four square patches are cut from each image at a corner-anchored 2x2
grid. At the default 512x512 training resolution the patches are 196x196
with origins (0,0), (0,316), (316,0), (316,316): maximal spread and
trivially non-overlapping since 196 <= 316. The same corner rule scales
to other resolutions (used by desk-scale smoke runs).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from patchreal.data import ImageTensor, as_tensor

DEFAULT_PATCH_SIZE = 196


@dataclass
class Patch:
    """One square crop with its provenance and grid placement."""

    data: torch.Tensor  # 3 x size x size, values in [-1, 1]
    source_id: str
    grid_pos: int  # 0..3, row-major over the 2x2 grid
    pixel_origin: tuple[int, int]  # (row, col) of the top-left corner

    @property
    def size(self) -> int:
        return int(self.data.shape[-1])


def patch_grid_origins(
    height: int, width: int, patch_size: int = DEFAULT_PATCH_SIZE
) -> list[tuple[int, int]]:
    """Corner-anchored origins for the 2x2 grid, row-major.

    Non-overlap requires 2*patch_size <= min(height, width): the second
    row/column starts at ``dim - patch_size`` which is then >= patch_size.
    """
    if 2 * patch_size > height or 2 * patch_size > width:
        raise ValueError(
            f"cannot place four non-overlapping {patch_size}x{patch_size} patches "
            f"in a {height}x{width} image"
        )
    rows = (0, height - patch_size)
    cols = (0, width - patch_size)
    return [(r, c) for r in rows for c in cols]


def extract_patches(
    img: ImageTensor | torch.Tensor, patch_size: int = DEFAULT_PATCH_SIZE
) -> list[Patch]:
    """Cut the four fixed-grid patches out of a 3xHxW image tensor.

    Deterministic: the same image always yields the same four patches at
    the same origins. Crops are views into the input tensor, so gradients
    flow back to a generated image. The default geometry expects 512x512
    inputs (196x196 patches); other sizes must satisfy the grid
    feasibility check.
    """
    t = as_tensor(img)
    source_id = img.source_id if isinstance(img, ImageTensor) else ""
    if t.ndim != 3 or t.shape[0] != 3:
        raise ValueError(f"expected a 3xHxW image, got shape {tuple(t.shape)}")
    height, width = int(t.shape[1]), int(t.shape[2])
    origins = patch_grid_origins(height, width, patch_size)
    return [
        Patch(
            data=t[:, r : r + patch_size, c : c + patch_size],
            source_id=source_id,
            grid_pos=pos,
            pixel_origin=(r, c),
        )
        for pos, (r, c) in enumerate(origins)
    ]


def stack_patches(patches: list[Patch]) -> torch.Tensor:
    """Stack patch tensors into an Nx3xSxS batch (keeps autograd graph)."""
    return torch.stack([p.data for p in patches], dim=0)
