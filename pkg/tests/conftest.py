"""Shared fixtures: tiny on-disk datasets and a session-scoped encoder.

Fixture images are smooth seeded color fields; enhanced counterparts are
a fixed channel transform of the synthetic image so a desk-scale training
run has a learnable mapping. The patch encoder uses the seeded
random-init backbone: every contract under test (shapes, determinism,
exactness) is weight-independent.
"""

from __future__ import annotations

import numpy as np
import pytest
import torch
from PIL import Image

from patchreal.data import DatasetSpec
from patchreal.embedding import PatchEncoder


def smooth_field(seed: int, size: tuple[int, int] = (128, 128)) -> np.ndarray:
    """Deterministic low-frequency RGB image, HxWx3 uint8."""
    h, w = size
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((h, w, 3))
    for c in range(3):
        for _ in range(3):
            fy, fx = rng.uniform(0.5, 2.5, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(0.2, 0.5)
            img[:, :, c] += amp * np.sin(
                2 * np.pi * (fy * yy / h + fx * xx / w) + phase
            )
    img = (img - img.min()) / (img.max() - img.min() + 1e-9)
    return (img * 255).astype(np.uint8)


def enhanced_counterpart(synthetic: np.ndarray) -> np.ndarray:
    """Fixed learnable transform: channel roll plus mild inversion."""
    rolled = np.roll(synthetic, shift=1, axis=2).astype(np.float64)
    return (0.75 * (255 - rolled) + 0.25 * synthetic).astype(np.uint8)


def write_png(path, arr: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path)


@pytest.fixture(scope="session")
def encoder() -> PatchEncoder:
    return PatchEncoder(weights="random", seed=0, device="cpu")


@pytest.fixture
def make_paired_dataset(tmp_path):
    """Factory: build synthetic/ and enhanced/ trees with aligned stems."""

    def _make(n_pairs=4, split="train", size=(128, 128), root=None, seed0=100):
        root = root or tmp_path
        syn_root = root / "synthetic"
        enh_root = root / "enhanced"
        for i in range(n_pairs):
            syn = smooth_field(seed0 + i, size)
            write_png(syn_root / split / f"img{i:03d}.png", syn)
            write_png(enh_root / split / f"img{i:03d}.png", enhanced_counterpart(syn))
        return (
            DatasetSpec(root=syn_root, kind="synthetic", split=split),
            DatasetSpec(root=enh_root, kind="enhanced", split=split),
        )

    return _make


@pytest.fixture
def make_real_dataset(tmp_path):
    """Factory: build a flat directory of 'real-world' images."""

    def _make(n_images=4, size=(128, 128), name="real", seed0=900):
        root = tmp_path / name
        for i in range(n_images):
            write_png(root / f"real{i:03d}.png", smooth_field(seed0 + i, size))
        return DatasetSpec(root=root, kind="real")

    return _make


@pytest.fixture
def rand_image():
    def _make(seed=0, size=(64, 64)) -> torch.Tensor:
        gen = torch.Generator().manual_seed(seed)
        return torch.rand(3, *size, generator=gen) * 2.0 - 1.0

    return _make
