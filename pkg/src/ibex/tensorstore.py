"""Binary tensor container (UIBF), dataset manifests and pixel-batch iteration.

UIBF layout, all little-endian:

    magic   4 bytes  b"UIBF"
    version u32      1
    ndim    u32
    dims    ndim x u64
    dtype   u32      0 = float32
    payload row-major float32

Datasets are described by JSON manifests (``features.json`` /
``concepts.json``) whose tensor paths are relative to the manifest's
directory. Feature tensors are [H, W, D] activation cuboids; concept masks
are [H_img, W_img] tensors holding {0.0, 1.0}.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DatasetError, TensorFormatError

MAGIC = b"UIBF"
VERSION = 1
DTYPE_F32 = 0

SPLITS = ("train", "val")


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    """Write a float32 tensor to ``path`` in the UIBF container format."""
    arr = np.ascontiguousarray(array, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise TensorFormatError(f"refusing to write non-finite values to {path}")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(struct.pack("<I", DTYPE_F32))
        f.write(arr.tobytes(order="C"))


def read_header(path: str | Path) -> tuple[int, ...]:
    """Parse and validate a UIBF header, returning the shape.

    Payload bytes are not read, which keeps manifest validation cheap.
    """
    with open(path, "rb") as f:
        head = f.read(12)
        if len(head) < 12 or head[:4] != MAGIC:
            raise TensorFormatError(f"{path}: bad magic, not a UIBF file")
        version, ndim = struct.unpack("<II", head[4:12])
        if version != VERSION:
            raise TensorFormatError(f"{path}: unsupported version {version}")
        dims_raw = f.read(8 * ndim)
        if len(dims_raw) < 8 * ndim:
            raise TensorFormatError(f"{path}: truncated header")
        shape = struct.unpack(f"<{ndim}Q", dims_raw)
        dtype_raw = f.read(4)
        if len(dtype_raw) < 4:
            raise TensorFormatError(f"{path}: truncated header")
        (dtype_code,) = struct.unpack("<I", dtype_raw)
        if dtype_code != DTYPE_F32:
            raise TensorFormatError(f"{path}: unknown dtype code {dtype_code}")
        if any(d <= 0 for d in shape):
            raise TensorFormatError(f"{path}: non-positive dimension in {shape}")
    return shape


def read_tensor(path: str | Path) -> np.ndarray:
    """Read a UIBF tensor, validating shape, payload length and finiteness."""
    shape = read_header(path)
    ndim = len(shape)
    header_len = 12 + 8 * ndim + 4
    count = int(np.prod(shape))
    with open(path, "rb") as f:
        f.seek(header_len)
        payload = f.read()
    if len(payload) != 4 * count:
        raise TensorFormatError(
            f"{path}: header promises {count} elements, payload holds "
            f"{len(payload) // 4}"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise TensorFormatError(f"{path}: non-finite values in payload")
    return arr.copy()


@dataclass(frozen=True)
class ImageEntry:
    image_id: str
    tensor_path: Path
    height: int  # feature-map rows
    width: int  # feature-map cols
    split: str


@dataclass(frozen=True)
class ConceptEntry:
    concept_id: int
    name: str
    category: str


@dataclass(frozen=True)
class MaskEntry:
    image_id: str
    concept_id: int
    mask_path: Path


class FeatureDataset:
    """Manifest-backed collection of per-image activation cuboids.

    Tensors load lazily and memoize; instances are immutable after
    construction and safe for concurrent reads.
    """

    def __init__(self, layer_dim: int, images: Sequence[ImageEntry]):
        self.layer_dim = int(layer_dim)
        self.images = sorted(images, key=lambda e: e.image_id)
        self._by_id = {e.image_id: e for e in self.images}
        self._cache: dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.images)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureDataset):
            return NotImplemented
        return self.layer_dim == other.layer_dim and self.images == other.images

    def entry(self, image_id: str) -> ImageEntry:
        try:
            return self._by_id[image_id]
        except KeyError:
            raise DatasetError(f"unknown image_id {image_id!r}") from None

    def load_features(self, image_id: str) -> np.ndarray:
        """Return the [H, W, D] cuboid for one image."""
        if image_id not in self._cache:
            self._cache[image_id] = read_tensor(self.entry(image_id).tensor_path)
        return self._cache[image_id]

    def subset(self, split: str) -> "FeatureDataset":
        if split not in SPLITS:
            raise DatasetError(f"unknown split {split!r}")
        return FeatureDataset(
            self.layer_dim, [e for e in self.images if e.split == split]
        )

    def pixel_count(self) -> int:
        return sum(e.height * e.width for e in self.images)

    def pixel_matrix(self) -> np.ndarray:
        """All pixel feature vectors stacked into one [P, D] float32 matrix.

        Row order follows id-sorted images, row-major within each image.
        """
        if not self.images:
            raise DatasetError("empty dataset has no pixels")
        blocks = [
            self.load_features(e.image_id).reshape(-1, self.layer_dim)
            for e in self.images
        ]
        return np.concatenate(blocks, axis=0)


class ConceptDataset:
    """Concept vocabulary plus per-(image, concept) binary masks."""

    def __init__(
        self,
        concepts: Sequence[ConceptEntry],
        masks: Sequence[MaskEntry],
        image_sizes: dict[str, tuple[int, int]],
    ):
        self.concepts = sorted(concepts, key=lambda c: c.concept_id)
        self.masks = sorted(masks, key=lambda m: (m.image_id, m.concept_id))
        self.image_sizes = dict(image_sizes)
        self._by_key = {(m.image_id, m.concept_id): m for m in self.masks}
        self._cache: dict[tuple[str, int], np.ndarray] = {}

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConceptDataset):
            return NotImplemented
        return (
            self.concepts == other.concepts
            and self.masks == other.masks
            and self.image_sizes == other.image_sizes
        )

    @property
    def concept_ids(self) -> list[int]:
        return [c.concept_id for c in self.concepts]

    def concept(self, concept_id: int) -> ConceptEntry:
        for c in self.concepts:
            if c.concept_id == concept_id:
                return c
        raise DatasetError(f"unknown concept_id {concept_id}")

    def image_size(self, image_id: str) -> tuple[int, int]:
        try:
            return self.image_sizes[image_id]
        except KeyError:
            raise DatasetError(f"no image size recorded for {image_id!r}") from None

    def load_mask(self, image_id: str, concept_id: int) -> np.ndarray | None:
        """Binary uint8 [H_img, W_img] mask, or None when no mask is recorded.

        Raw values binarize with the documented ``value > 0.5`` rule; values
        outside [0, 1] raise, catching corrupt (non-binary) mask tensors.
        """
        key = (image_id, concept_id)
        if key in self._cache:
            return self._cache[key]
        entry = self._by_key.get(key)
        if entry is None:
            return None
        raw = read_tensor(entry.mask_path)
        if raw.ndim != 2:
            raise DatasetError(f"{entry.mask_path}: mask must be 2-D, got {raw.shape}")
        if raw.min() < -1e-6 or raw.max() > 1 + 1e-6:
            raise DatasetError(
                f"{entry.mask_path}: non-binary mask values outside [0, 1]"
            )
        mask = (raw > 0.5).astype(np.uint8)
        self._cache[key] = mask
        return mask


def _require(doc: dict, key: str, manifest: Path):
    if key not in doc:
        raise DatasetError(f"{manifest}: missing required field {key!r}")
    return doc[key]


def load_feature_dataset(manifest_path: str | Path) -> FeatureDataset:
    """Load and validate a features.json manifest."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DatasetError(f"manifest not found: {manifest_path}")
    doc = json.loads(manifest_path.read_text())
    layer_dim = int(_require(doc, "layer_dim", manifest_path))
    if layer_dim <= 0:
        raise DatasetError(f"{manifest_path}: layer_dim must be positive")
    root = manifest_path.parent
    entries = []
    seen: set[str] = set()
    for item in _require(doc, "images", manifest_path):
        image_id = str(_require(item, "image_id", manifest_path))
        if image_id in seen:
            raise DatasetError(f"{manifest_path}: duplicate image_id {image_id!r}")
        seen.add(image_id)
        split = str(_require(item, "split", manifest_path))
        if split not in SPLITS:
            raise DatasetError(f"{manifest_path}: bad split {split!r} for {image_id}")
        tensor_path = root / str(_require(item, "tensor_path", manifest_path))
        if not tensor_path.exists():
            raise DatasetError(f"{manifest_path}: tensor file missing: {tensor_path}")
        shape = read_header(tensor_path)
        height = int(_require(item, "height", manifest_path))
        width = int(_require(item, "width", manifest_path))
        if shape != (height, width, layer_dim):
            raise DatasetError(
                f"{tensor_path}: shape {shape} does not match manifest "
                f"({height}, {width}, {layer_dim}); layer dimensionality must "
                "be shared by every image"
            )
        entries.append(ImageEntry(image_id, tensor_path, height, width, split))
    return FeatureDataset(layer_dim, entries)


def load_concept_dataset(
    manifest_path: str | Path, feature_ds: FeatureDataset
) -> ConceptDataset:
    """Load a concepts.json manifest, cross-referencing ``feature_ds``."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DatasetError(f"manifest not found: {manifest_path}")
    doc = json.loads(manifest_path.read_text())
    root = manifest_path.parent

    concepts = []
    seen_ids: set[int] = set()
    for item in _require(doc, "concepts", manifest_path):
        cid = int(_require(item, "concept_id", manifest_path))
        if cid in seen_ids:
            raise DatasetError(f"{manifest_path}: duplicate concept_id {cid}")
        seen_ids.add(cid)
        concepts.append(
            ConceptEntry(cid, str(item.get("name", f"concept_{cid}")),
                         str(item.get("category", "")))
        )
    if not concepts:
        raise DatasetError(f"{manifest_path}: empty concept list, labeling impossible")

    known_images = {e.image_id for e in feature_ds.images}
    image_sizes: dict[str, tuple[int, int]] = {}
    for item in _require(doc, "images", manifest_path):
        image_id = str(_require(item, "image_id", manifest_path))
        if image_id not in known_images:
            raise DatasetError(
                f"{manifest_path}: image_id {image_id!r} not in feature dataset"
            )
        image_sizes[image_id] = (
            int(_require(item, "height", manifest_path)),
            int(_require(item, "width", manifest_path)),
        )

    masks = []
    for item in _require(doc, "masks", manifest_path):
        image_id = str(_require(item, "image_id", manifest_path))
        cid = int(_require(item, "concept_id", manifest_path))
        if image_id not in known_images:
            raise DatasetError(
                f"{manifest_path}: mask references unknown image_id {image_id!r}"
            )
        if cid not in seen_ids:
            raise DatasetError(
                f"{manifest_path}: mask references unknown concept_id {cid}"
            )
        if image_id not in image_sizes:
            raise DatasetError(
                f"{manifest_path}: no image size recorded for {image_id!r}"
            )
        mask_path = root / str(_require(item, "mask_path", manifest_path))
        if not mask_path.exists():
            raise DatasetError(f"{manifest_path}: mask file missing: {mask_path}")
        masks.append(MaskEntry(image_id, cid, mask_path))
    return ConceptDataset(concepts, masks, image_sizes)


def iterate_pixel_batches(
    feature_ds: FeatureDataset, batch_size: int, seed: int
) -> Iterator[np.ndarray]:
    """Yield [B, D] float32 batches covering every pixel exactly once.

    The visiting order is a deterministic permutation of all pixel rows
    derived from ``seed``; the final batch may be short. Iterators are
    single-consumer objects.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if len(feature_ds) == 0:
        raise DatasetError("cannot iterate over an empty dataset")
    pixels = feature_ds.pixel_matrix()
    order = np.random.default_rng(seed).permutation(pixels.shape[0])
    for start in range(0, len(order), batch_size):
        yield pixels[order[start : start + batch_size]]
