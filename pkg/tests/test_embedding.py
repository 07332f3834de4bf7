import numpy as np
import pytest
import torch

from patchreal.embedding import PatchEncoder, SetupError
from patchreal.patches import extract_patches


def relu4_3_dim_oracle(patch_size: int) -> int:
    """Shape oracle from the backbone's published architecture: three 2x2
    max pools precede block 4 (each floor-halving), the stated activation
    has 512 channels, and 3x3 stride-1 pad-1 convs preserve spatial size."""
    s = patch_size
    for _ in range(3):
        s = s // 2
    return 512 * s * s


class TestEmbed:
    def test_repeated_calls_bitwise_identical(self, encoder, rand_image):
        p = rand_image(0, (48, 48))
        a = encoder.embed(p)
        b = encoder.embed(p)
        assert np.array_equal(a, b)

    def test_one_pixel_perturbation_changes_vector(self, encoder, rand_image):
        p = rand_image(1, (48, 48))
        q = p.clone()
        q[0, 10, 10] += 0.5
        assert not np.array_equal(encoder.embed(p), encoder.embed(q))

    def test_dimensionality_matches_architecture_oracle(self, encoder, rand_image):
        assert relu4_3_dim_oracle(196) == 294912  # 512 * 24 * 24
        vec = encoder.embed(rand_image(2, (196, 196)))
        assert vec.shape == (294912,)
        assert encoder.output_dim(196) == 294912
        assert encoder.output_dim(48) == relu4_3_dim_oracle(48) == 18432

    def test_all_finite(self, encoder, rand_image):
        assert np.all(np.isfinite(encoder.embed(rand_image(3, (48, 48)))))

    def test_batch_matches_single(self, encoder, rand_image):
        patches = extract_patches(rand_image(4, (128, 128)), 48)
        batch = encoder.embed_batch(patches)
        assert batch.shape == (4, encoder.output_dim(48))
        for i, p in enumerate(patches):
            assert np.allclose(batch[i], encoder.embed(p.data), atol=1e-6)

    def test_rejects_bad_shapes(self, encoder):
        with pytest.raises(ValueError):
            encoder.embed(torch.zeros(1, 48, 48))
        with pytest.raises(ValueError):
            encoder.embed_batch([])


class TestConstruction:
    def test_invalid_weights_argument(self):
        with pytest.raises(ValueError):
            PatchEncoder(weights="bogus")

    def test_pretrained_missing_weights_names_asset(self):
        try:
            enc = PatchEncoder(weights="pretrained", device="cpu")
        except SetupError as exc:
            assert "vgg16-397923af.pth" in str(exc)
        else:
            # weights are cached on this machine; the id must say so
            assert enc.backbone_id.endswith(":imagenet")

    def test_backbone_id_roundtrip(self, encoder, rand_image):
        assert encoder.backbone_id == "vgg16_relu4_3:random-seed0"
        rebuilt = PatchEncoder.from_backbone_id(encoder.backbone_id, device="cpu")
        p = rand_image(5, (48, 48))
        assert np.array_equal(rebuilt.embed(p), encoder.embed(p))

    def test_from_backbone_id_rejects_unknown(self):
        with pytest.raises(ValueError):
            PatchEncoder.from_backbone_id("resnet50:imagenet")

    def test_seeds_give_distinct_backbones(self, encoder, rand_image):
        other = PatchEncoder(weights="random", seed=1, device="cpu")
        assert other.backbone_id != encoder.backbone_id
        p = rand_image(6, (48, 48))
        assert not np.array_equal(other.embed(p), encoder.embed(p))

    def test_frozen_parameters(self, encoder):
        assert all(not p.requires_grad for p in encoder._net.parameters())
