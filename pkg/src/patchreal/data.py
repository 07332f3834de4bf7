"""Dataset loading, pairing, preprocessing, and splits.

Three dataset kinds feed the pipeline: synthetic renders, their
photorealism-enhanced counterparts (aligned pairs used as supervision
targets), and unpaired real-world images (source of matched patches).
All images pass through the same preprocessing: resize to a fixed
resolution, then map 8-bit values into [-1, 1] with mean/std 0.5.

Directory convention: ``<root>/<split>/<stem>.<ext>`` with an optional
plain-text split manifest (one stem per line) at ``<root>/<split>.txt``.
Synthetic/enhanced pairing is by filename stem.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".webp")
DEFAULT_RESOLUTION = (512, 512)
NORM_MEAN = (0.5, 0.5, 0.5)
NORM_STD = (0.5, 0.5, 0.5)

DATASET_KINDS = ("synthetic", "enhanced", "real")
SPLITS = ("train", "val", "test")


class IngestionError(RuntimeError):
    """An image file exists but cannot be read or decoded."""


@dataclass
class ImageTensor:
    """A 3xHxW float32 tensor in [-1, 1] with provenance.

    This is the currency of all network I/O: synthetic inputs, enhanced
    targets, real images, and generated outputs all use this shape and
    value range.
    """

    data: torch.Tensor
    source_id: str = ""

    value_range = (-1.0, 1.0)

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != 3:
            raise ValueError(
                f"ImageTensor expects 3xHxW data, got shape {tuple(self.data.shape)}"
            )

    @property
    def height(self) -> int:
        return int(self.data.shape[1])

    @property
    def width(self) -> int:
        return int(self.data.shape[2])


def as_tensor(img: ImageTensor | torch.Tensor) -> torch.Tensor:
    """Unwrap an ImageTensor (or pass a raw 3xHxW tensor through)."""
    return img.data if isinstance(img, ImageTensor) else img


@dataclass
class DatasetSpec:
    """Location and role of one dataset on disk.

    ``split`` selects the ``<root>/<split>/`` subdirectory; a flat root is
    used when split is None. ``pairing_rule`` names how synthetic and
    enhanced files align; only stem equality is supported.
    """

    root: Path
    kind: str
    split: str | None = None
    pairing_rule: str = "stem"

    def __post_init__(self):
        self.root = Path(self.root)
        if self.kind not in DATASET_KINDS:
            raise ValueError(f"kind must be one of {DATASET_KINDS}, got {self.kind!r}")
        if self.pairing_rule != "stem":
            raise ValueError(f"unsupported pairing rule {self.pairing_rule!r}")

    def directory(self) -> Path:
        return self.root / self.split if self.split else self.root

    def list_files(self) -> dict[str, Path]:
        """Map stem -> file path for every image in this spec's directory."""
        directory = self.directory()
        if not directory.is_dir():
            raise FileNotFoundError(f"dataset directory does not exist: {directory}")
        files = {}
        for path in sorted(directory.iterdir()):
            if path.suffix.lower() in IMAGE_EXTENSIONS:
                files[path.stem] = path
        return files


def load_image(path: str | Path) -> Image.Image:
    """Open an image file as RGB, raising IngestionError with the path on failure."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise IngestionError(f"cannot read image {path}: {exc}") from exc


def preprocess(
    raw_image: Image.Image | np.ndarray,
    resolution: tuple[int, int] = DEFAULT_RESOLUTION,
    source_id: str = "",
) -> ImageTensor:
    """Resize an 8-bit RGB image and normalize it into [-1, 1].

    The image is stretched to ``resolution`` (H, W) with an antialiased
    bilinear filter, then mapped per channel via v -> (v/255 - 0.5)/0.5.
    Resampling is skipped entirely when the input is already at the target
    size, so same-size preprocessing is exact.
    """
    h, w = int(resolution[0]), int(resolution[1])
    if h <= 0 or w <= 0:
        raise ValueError(f"resolution must be positive, got {(h, w)}")

    if isinstance(raw_image, np.ndarray):
        if raw_image.ndim != 3 or raw_image.shape[2] != 3:
            raise ValueError(
                f"expected HxWx3 RGB array, got shape {raw_image.shape}"
            )
        img = Image.fromarray(raw_image.astype(np.uint8), mode="RGB")
    else:
        img = raw_image
        if img.mode != "RGB":
            bands = len(img.getbands())
            if bands != 3:
                raise ValueError(f"expected a 3-channel image, got {bands} channels")
            img = img.convert("RGB")

    if img.size != (w, h):
        img = img.resize((w, h), Image.Resampling.BILINEAR)

    arr = np.asarray(img, dtype=np.float32)
    arr = (arr / 255.0 - NORM_MEAN[0]) / NORM_STD[0]
    data = torch.from_numpy(arr).permute(2, 0, 1).contiguous()
    return ImageTensor(data=data, source_id=source_id)


def denormalize(img: ImageTensor | torch.Tensor) -> np.ndarray:
    """Map a [-1, 1] tensor back to an HxWx3 uint8 array.

    Values are clamped, scaled to [0, 255], and rounded half-to-even, so a
    preprocess -> denormalize round trip reproduces 8-bit inputs exactly
    (up to resizing).
    """
    t = as_tensor(img)
    if t.ndim == 4:
        if t.shape[0] != 1:
            raise ValueError("denormalize expects a single image")
        t = t[0]
    arr = t.detach().cpu().numpy()
    arr = np.clip((arr + 1.0) / 2.0, 0.0, 1.0) * 255.0
    return np.rint(arr).astype(np.uint8).transpose(1, 2, 0)


def save_image(img: ImageTensor | torch.Tensor, path: str | Path) -> Path:
    """Denormalize and write an image tensor as a PNG (or per extension)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(denormalize(img), mode="RGB").save(path)
    return path


@dataclass
class PairingReport:
    """Which stems paired up and which were excluded, with reasons.

    Exclusions are never silent: the report is attached to every loaded
    split and can be written out as a text file, one excluded stem per
    line with its reason.
    """

    split: str
    paired: list[str]
    excluded: list[tuple[str, str]]  # (stem, reason)

    @property
    def is_clean(self) -> bool:
        return not self.excluded

    def summary(self) -> str:
        return (
            f"split={self.split}: {len(self.paired)} pairs, "
            f"{len(self.excluded)} excluded"
        )

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [f"# pairing report: {self.summary()}"]
        for stem, reason in self.excluded:
            lines.append(f"{stem}\t{reason}")
        path.write_text("\n".join(lines) + "\n")
        return path


class PairedImageSequence(Sequence):
    """Lazy, immutable sequence of aligned (synthetic, enhanced) pairs.

    Items are loaded and preprocessed on access; each returned pair is a
    fresh ImageTensor, so elements are safe to hand to any thread. The
    iteration order is fixed at construction (seeded shuffle or sorted).
    """

    def __init__(
        self,
        synthetic: DatasetSpec,
        enhanced: DatasetSpec,
        stems: list[str],
        resolution: tuple[int, int],
        report: PairingReport,
    ):
        self._synthetic_files = synthetic.list_files() if stems else {}
        self._enhanced_files = enhanced.list_files() if stems else {}
        self.stems = list(stems)
        self.resolution = resolution
        self.report = report

    def __len__(self) -> int:
        return len(self.stems)

    def __getitem__(self, i):
        if isinstance(i, slice):
            raise TypeError("slicing is not supported; index single pairs")
        stem = self.stems[i]
        x_path = self._synthetic_files[stem]
        t_path = self._enhanced_files[stem]
        x = preprocess(load_image(x_path), self.resolution, source_id=str(x_path))
        t = preprocess(load_image(t_path), self.resolution, source_id=str(t_path))
        return x, t


def _read_manifest(path: Path) -> list[str]:
    stems = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            stems.append(line)
    return stems


def load_paired_split(
    synthetic: DatasetSpec,
    enhanced: DatasetSpec,
    split: str | None = None,
    resolution: tuple[int, int] = DEFAULT_RESOLUTION,
    seed: int | None = None,
    manifest: str | Path | None = None,
    report_path: str | Path | None = None,
) -> PairedImageSequence:
    """Align a synthetic and an enhanced dataset into one paired split.

    Stems come from ``manifest`` if given, else from ``<root>/<split>.txt``
    next to the synthetic split directory if present, else from the union
    of both directory listings. Stems missing a counterpart are excluded
    and listed in the pairing report. With a seed the pair order is a
    seeded permutation (byte-identical across runs); otherwise sorted.
    """
    if split is not None:
        synthetic = replace(synthetic, split=split)
        enhanced = replace(enhanced, split=split)
    split_name = synthetic.split or "all"

    syn_files = synthetic.list_files()
    enh_files = enhanced.list_files()

    if manifest is None:
        candidate = synthetic.root / f"{synthetic.split}.txt" if synthetic.split else None
        if candidate is not None and candidate.is_file():
            manifest = candidate

    if manifest is not None:
        stems = _read_manifest(Path(manifest))
    else:
        stems = sorted(set(syn_files) | set(enh_files))

    paired, excluded = [], []
    for stem in stems:
        in_syn, in_enh = stem in syn_files, stem in enh_files
        if in_syn and in_enh:
            paired.append(stem)
        elif in_syn:
            excluded.append((stem, "missing-enhanced"))
        elif in_enh:
            excluded.append((stem, "missing-synthetic"))
        else:
            excluded.append((stem, "missing-file"))

    report = PairingReport(split=split_name, paired=list(paired), excluded=excluded)
    if report_path is not None:
        report.write(report_path)
    if excluded:
        log.warning("pairing excluded %d stems in split %s", len(excluded), split_name)
    if not paired:
        log.warning("split %s is empty (%s)", split_name, report.summary())

    order = sorted(paired)
    if seed is not None:
        rng = np.random.default_rng(seed)
        order = [order[i] for i in rng.permutation(len(order))]

    return PairedImageSequence(synthetic, enhanced, order, resolution, report)


def split_overlaps(spec: DatasetSpec, splits: Sequence[str] = SPLITS) -> dict[str, set]:
    """Return stems shared between any two splits (should all be empty)."""
    stem_sets = {}
    for s in splits:
        directory = spec.root / s
        if directory.is_dir():
            stem_sets[s] = set(replace(spec, split=s).list_files())
    overlaps = {}
    names = sorted(stem_sets)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            shared = stem_sets[a] & stem_sets[b]
            if shared:
                overlaps[f"{a}/{b}"] = shared
    return overlaps
