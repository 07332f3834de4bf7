"""Exact L2 nearest-neighbor index over real-world patch embeddings.

A flat index: all embeddings live in one matrix and every query scans all
of them, so the top-1 result is the exact argmin of squared L2 distance
(ties broken by lowest insertion id). At the intended scale (four patches
per real image, at most ~120k entries) exact search is fast enough and
keeps the argmin contract directly testable. The index is immutable after
construction; concurrent read-only queries are safe.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from patchreal.data import DatasetSpec, ImageTensor, load_image, preprocess
from patchreal.embedding import PatchEncoder
from patchreal.patches import Patch, extract_patches

_EMBEDDINGS_FILE = "embeddings.npy"
_MANIFEST_FILE = "manifest.json"
_QUERY_CHUNK = 4096


@dataclass(frozen=True)
class IndexRecord:
    """Provenance of one stored patch: which image, where in it."""

    source_id: str
    grid_pos: int
    pixel_origin: tuple[int, int]


class PatchIndex:
    """Flat exact-L2 index of patch embeddings with provenance.

    ``query_count`` tallies every nearest-neighbor lookup; training-mode
    contracts (hybrid consults the index, enhanced-only never does) are
    verified against it.
    """

    def __init__(
        self,
        embeddings: np.ndarray,
        provenance: list[IndexRecord],
        backbone_id: str,
        layer_name: str,
        resolution: tuple[int, int],
        patch_size: int,
    ):
        embeddings = np.ascontiguousarray(embeddings, dtype=np.float32)
        if embeddings.ndim != 2:
            raise ValueError(f"embeddings must be NxD, got shape {embeddings.shape}")
        if len(provenance) != embeddings.shape[0]:
            raise ValueError(
                f"provenance length {len(provenance)} does not match "
                f"{embeddings.shape[0]} embeddings"
            )
        if not np.all(np.isfinite(embeddings)):
            raise ValueError("embeddings contain non-finite values")
        self.embeddings = embeddings
        self.provenance = list(provenance)
        self.backbone_id = backbone_id
        self.layer_name = layer_name
        self.resolution = (int(resolution[0]), int(resolution[1]))
        self.patch_size = int(patch_size)
        self.query_count = 0
        # cached squared norms make the scan a single matmul per chunk
        self._sq_norms = np.einsum(
            "ij,ij->i", embeddings.astype(np.float64), embeddings.astype(np.float64)
        )

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def query(self, vector: np.ndarray) -> tuple[IndexRecord, float]:
        """Return (provenance, squared L2 distance) of the nearest entry.

        The scan uses the norm decomposition ||e - q||^2 = ||e||^2 +
        ||q||^2 - 2 e.q in float64; the winner's distance is then
        recomputed directly from the stored vector, so a stored vector
        queried against itself reports exactly 0.0.
        """
        if len(self) == 0:
            raise ValueError("cannot query an empty index")
        q = np.asarray(vector, dtype=np.float64).ravel()
        if q.shape[0] != self.dim:
            raise ValueError(
                f"query dimensionality {q.shape[0]} does not match index dim {self.dim}"
            )
        self.query_count += 1

        best_id, best_score = -1, np.inf
        for start in range(0, len(self), _QUERY_CHUNK):
            chunk = self.embeddings[start : start + _QUERY_CHUNK].astype(np.float64)
            scores = self._sq_norms[start : start + len(chunk)] - 2.0 * (chunk @ q)
            k = int(np.argmin(scores))
            if scores[k] < best_score:
                best_id, best_score = start + k, float(scores[k])

        diff = self.embeddings[best_id].astype(np.float64) - q
        distance = float(diff @ diff)
        return self.provenance[best_id], distance

    def retrieve_patch(self, record: IndexRecord) -> Patch:
        """Re-crop the stored patch's pixels from its source image.

        Matching happens in feature space but the discriminator consumes
        pixels, so matched patches are reconstructed from provenance using
        the same preprocessing the index was built with.
        """
        img = _load_preprocessed(record.source_id, self.resolution)
        r, c = record.pixel_origin
        s = self.patch_size
        return Patch(
            data=img.data[:, r : r + s, c : c + s],
            source_id=record.source_id,
            grid_pos=record.grid_pos,
            pixel_origin=record.pixel_origin,
        )

    def save(self, path: str | Path) -> Path:
        """Persist as a directory: binary embedding matrix + JSON manifest."""
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        np.save(path / _EMBEDDINGS_FILE, self.embeddings)
        manifest = {
            "backbone_id": self.backbone_id,
            "layer_name": self.layer_name,
            "dim": self.dim,
            "entry_count": len(self),
            "resolution": list(self.resolution),
            "patch_size": self.patch_size,
            "provenance": [
                {
                    "source_id": r.source_id,
                    "grid_pos": r.grid_pos,
                    "pixel_origin": list(r.pixel_origin),
                }
                for r in self.provenance
            ],
        }
        (path / _MANIFEST_FILE).write_text(json.dumps(manifest, indent=1))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "PatchIndex":
        path = Path(path)
        embeddings = np.load(path / _EMBEDDINGS_FILE)
        manifest = json.loads((path / _MANIFEST_FILE).read_text())
        if manifest["entry_count"] != embeddings.shape[0]:
            raise ValueError(
                f"manifest entry_count {manifest['entry_count']} does not match "
                f"embedding matrix rows {embeddings.shape[0]}"
            )
        provenance = [
            IndexRecord(
                source_id=r["source_id"],
                grid_pos=r["grid_pos"],
                pixel_origin=tuple(r["pixel_origin"]),
            )
            for r in manifest["provenance"]
        ]
        return cls(
            embeddings=embeddings,
            provenance=provenance,
            backbone_id=manifest["backbone_id"],
            layer_name=manifest["layer_name"],
            resolution=tuple(manifest["resolution"]),
            patch_size=manifest["patch_size"],
        )


def query_nearest(index: PatchIndex, query: np.ndarray) -> tuple[IndexRecord, float]:
    """Functional alias for PatchIndex.query."""
    return index.query(query)


def build_index(
    real_dataset: DatasetSpec,
    encoder: PatchEncoder,
    resolution: tuple[int, int] = (512, 512),
    patch_size: int = 196,
    out: str | Path | None = None,
) -> PatchIndex:
    """Embed four patches from every real image and index them.

    Real images run through the same preprocessing pipeline as the paired
    datasets before patch extraction. Raises on an empty dataset; persists
    to ``out`` when given.
    """
    files = real_dataset.list_files()
    if not files:
        raise ValueError(
            f"cannot build an index from an empty dataset: {real_dataset.directory()}"
        )
    vectors, provenance = [], []
    for stem in sorted(files):
        path = files[stem]
        img = preprocess(load_image(path), resolution, source_id=str(path))
        patches = extract_patches(img, patch_size)
        vectors.append(encoder.embed_batch(patches))
        provenance.extend(
            IndexRecord(str(path), p.grid_pos, p.pixel_origin) for p in patches
        )
    index = PatchIndex(
        embeddings=np.concatenate(vectors, axis=0),
        provenance=provenance,
        backbone_id=encoder.backbone_id,
        layer_name=encoder.layer_name,
        resolution=resolution,
        patch_size=patch_size,
    )
    if out is not None:
        index.save(out)
    return index


@lru_cache(maxsize=64)
def _load_preprocessed(path: str, resolution: tuple[int, int]) -> ImageTensor:
    return preprocess(load_image(path), resolution, source_id=path)
