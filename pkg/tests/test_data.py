import numpy as np
import pytest
import torch
from PIL import Image

from patchreal.data import (
    DEFAULT_RESOLUTION,
    NORM_MEAN,
    NORM_STD,
    DatasetSpec,
    ImageTensor,
    IngestionError,
    denormalize,
    load_image,
    load_paired_split,
    preprocess,
    split_overlaps,
)

from conftest import smooth_field, write_png


class TestPreprocess:
    def test_affine_endpoints(self):
        # 0 -> -1.0 and 255 -> +1.0, the endpoints of v -> (v/255 - 0.5)/0.5
        black = np.zeros((8, 8, 3), dtype=np.uint8)
        white = np.full((8, 8, 3), 255, dtype=np.uint8)
        assert torch.all(preprocess(black, (8, 8)).data == -1.0)
        assert torch.all(preprocess(white, (8, 8)).data == 1.0)

    def test_affine_midpoint_symmetry(self):
        # the map's midpoint is 127.5 -> 0.0; the adjacent integers bracket
        # zero symmetrically at +/- 1/255
        lo = preprocess(np.full((4, 4, 3), 127, dtype=np.uint8), (4, 4)).data
        hi = preprocess(np.full((4, 4, 3), 128, dtype=np.uint8), (4, 4)).data
        assert torch.allclose(lo, -hi, atol=1e-6)  # symmetric up to fp32 rounding
        assert hi[0, 0, 0].item() == pytest.approx(1.0 / 255.0, abs=1e-6)
        assert (127.5 / 255.0 - 0.5) / 0.5 == 0.0

    def test_defaults_match_protocol(self):
        assert DEFAULT_RESOLUTION == (512, 512)
        assert NORM_MEAN == (0.5, 0.5, 0.5)
        assert NORM_STD == (0.5, 0.5, 0.5)
        img = smooth_field(1, (32, 48))
        out = preprocess(Image.fromarray(img))
        assert out.data.shape == (3, 512, 512)

    def test_same_size_input_is_exact(self):
        # no resampling when the input is already at the target size: the
        # result equals the direct affine map of the raw array
        arr = smooth_field(2, (64, 64))
        out = preprocess(arr, (64, 64)).data
        oracle = torch.from_numpy(
            ((arr.astype(np.float32) / 255.0 - 0.5) / 0.5).transpose(2, 0, 1)
        )
        assert torch.equal(out, oracle)

    def test_idempotent_when_already_sized(self):
        arr = smooth_field(3, (64, 64))
        a = preprocess(arr, (64, 64)).data
        b = preprocess(arr, (64, 64)).data
        assert torch.equal(a, b)

    def test_resize_changes_shape(self):
        arr = smooth_field(4, (100, 80))
        out = preprocess(arr, (64, 64))
        assert out.data.shape == (3, 64, 64)
        assert out.data.min() >= -1.0 and out.data.max() <= 1.0

    def test_roundtrip_within_one_level(self):
        arr = smooth_field(5, (48, 48))
        back = denormalize(preprocess(arr, (48, 48)))
        assert np.abs(back.astype(int) - arr.astype(int)).max() <= 1

    def test_rejects_non_rgb(self):
        gray = Image.fromarray(np.zeros((16, 16), dtype=np.uint8), mode="L")
        with pytest.raises(ValueError, match="channel"):
            preprocess(gray, (16, 16))
        with pytest.raises(ValueError, match="RGB"):
            preprocess(np.zeros((16, 16), dtype=np.uint8), (16, 16))

    def test_rejects_bad_resolution(self):
        with pytest.raises(ValueError):
            preprocess(np.zeros((8, 8, 3), dtype=np.uint8), (0, 8))

    def test_unreadable_file_names_path(self, tmp_path):
        bad = tmp_path / "broken.png"
        bad.write_bytes(b"not an image at all")
        with pytest.raises(IngestionError, match="broken.png"):
            load_image(bad)


class TestDenormalize:
    def test_clamps_out_of_range(self):
        t = torch.tensor([[[2.0]], [[-3.0]], [[1.0]]])
        out = denormalize(t)
        assert out[0, 0, 0] == 255 and out[0, 0, 1] == 0 and out[0, 0, 2] == 255

    def test_rounds_half_to_even(self):
        # values mapping to 127.5 and 126.5 round to the even neighbors
        t_up = torch.zeros(3, 1, 1)  # -> 127.5
        t_down = torch.full((3, 1, 1), -2.0 / 255.0)  # -> 126.5
        assert denormalize(t_up)[0, 0, 0] == 128
        assert denormalize(t_down)[0, 0, 0] == 126


class TestImageTensor:
    def test_validates_shape(self):
        with pytest.raises(ValueError):
            ImageTensor(data=torch.zeros(1, 8, 8))
        with pytest.raises(ValueError):
            ImageTensor(data=torch.zeros(8, 8))
        it = ImageTensor(data=torch.zeros(3, 8, 10), source_id="x")
        assert (it.height, it.width) == (8, 10)


class TestDatasetSpec:
    def test_validates_kind(self, tmp_path):
        with pytest.raises(ValueError):
            DatasetSpec(root=tmp_path, kind="bogus")

    def test_missing_directory(self, tmp_path):
        spec = DatasetSpec(root=tmp_path / "nope", kind="real")
        with pytest.raises(FileNotFoundError):
            spec.list_files()


class TestPairing:
    def test_ten_pair_fixture_aligns_by_stem(self, make_paired_dataset):
        syn, enh = make_paired_dataset(n_pairs=10, size=(32, 32))
        seq = load_paired_split(syn, enh, split="train", resolution=(32, 32))
        assert len(seq) == 10
        assert seq.report.is_clean
        x, t = seq[0]
        # stems of the two sides match
        from pathlib import Path

        assert Path(x.source_id).stem == Path(t.source_id).stem
        assert x.data.shape == t.data.shape == (3, 32, 32)

    def test_unpaired_files_reported_not_silent(self, make_paired_dataset, tmp_path):
        syn, enh = make_paired_dataset(n_pairs=3, size=(32, 32))
        write_png(syn.root / "train" / "orphan.png", smooth_field(7, (32, 32)))
        report_path = tmp_path / "pairing.txt"
        seq = load_paired_split(
            syn, enh, split="train", resolution=(32, 32), report_path=report_path
        )
        assert len(seq) == 3
        assert ("orphan", "missing-enhanced") in seq.report.excluded
        text = report_path.read_text()
        assert "orphan" in text and "missing-enhanced" in text

    def test_empty_directories_yield_empty_sequence(self, tmp_path):
        (tmp_path / "s" / "train").mkdir(parents=True)
        (tmp_path / "e" / "train").mkdir(parents=True)
        seq = load_paired_split(
            DatasetSpec(root=tmp_path / "s", kind="synthetic"),
            DatasetSpec(root=tmp_path / "e", kind="enhanced"),
            split="train",
        )
        assert len(seq) == 0
        assert seq.report.summary().startswith("split=train: 0 pairs")

    def test_seeded_order_is_reproducible(self, make_paired_dataset):
        syn, enh = make_paired_dataset(n_pairs=10, size=(32, 32))
        a = load_paired_split(syn, enh, split="train", seed=11, resolution=(32, 32))
        b = load_paired_split(syn, enh, split="train", seed=11, resolution=(32, 32))
        c = load_paired_split(syn, enh, split="train", seed=12, resolution=(32, 32))
        assert a.stems == b.stems
        assert a.stems != c.stems  # 10! orders; collision is negligible
        assert sorted(a.stems) == sorted(c.stems)

    def test_unseeded_order_is_sorted(self, make_paired_dataset):
        syn, enh = make_paired_dataset(n_pairs=5, size=(32, 32))
        seq = load_paired_split(syn, enh, split="train", resolution=(32, 32))
        assert seq.stems == sorted(seq.stems)

    def test_manifest_restricts_and_reports_missing(self, make_paired_dataset, tmp_path):
        syn, enh = make_paired_dataset(n_pairs=4, size=(32, 32))
        manifest = tmp_path / "subset.txt"
        manifest.write_text("img000\nimg002\nghost\n")
        seq = load_paired_split(
            syn, enh, split="train", resolution=(32, 32), manifest=manifest
        )
        assert seq.stems == ["img000", "img002"]
        assert ("ghost", "missing-file") in seq.report.excluded

    def test_auto_manifest_next_to_split(self, make_paired_dataset):
        syn, enh = make_paired_dataset(n_pairs=4, size=(32, 32))
        (syn.root / "train.txt").write_text("img001\n")
        seq = load_paired_split(syn, enh, split="train", resolution=(32, 32))
        assert seq.stems == ["img001"]


class TestSplitOverlaps:
    def test_detects_shared_stems(self, tmp_path):
        for split, stems in [("train", ["a", "b"]), ("val", ["b", "c"])]:
            for stem in stems:
                write_png(tmp_path / "d" / split / f"{stem}.png", smooth_field(1, (16, 16)))
        spec = DatasetSpec(root=tmp_path / "d", kind="synthetic")
        overlaps = split_overlaps(spec)
        assert overlaps == {"train/val": {"b"}}

    def test_clean_splits(self, tmp_path):
        for split, stems in [("train", ["a"]), ("val", ["b"])]:
            for stem in stems:
                write_png(tmp_path / "d" / split / f"{stem}.png", smooth_field(1, (16, 16)))
        assert split_overlaps(DatasetSpec(root=tmp_path / "d", kind="synthetic")) == {}
