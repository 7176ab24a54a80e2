"""Detector labeling and validation via dataset-accumulated IoU.

Each detector (w_i, b_i) yields a binary map per image by the strict rule
w_i . x_p - b_i > 0 at the feature map's native resolution; maps are then
bilinearly upsampled to the annotation resolution (half-pixel centers) and
re-binarized at 0.5. IoU accumulates intersection and union counts over
the whole split before dividing, and a detector's label is the concept
maximizing its train-split IoU.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DatasetError
from .tensorstore import ConceptDataset, FeatureDataset


@dataclass(frozen=True)
class Detectors:
    """Linear concept detectors in raw projection space."""

    w: np.ndarray  # [I, D] rows
    bias: np.ndarray  # [I]

    def __post_init__(self):
        if self.w.ndim != 2 or self.bias.shape != (self.w.shape[0],):
            raise ValueError("detector rows and biases are inconsistent")

    @property
    def count(self) -> int:
        return self.w.shape[0]

    @classmethod
    def natural(cls, dim: int, bias: np.ndarray) -> "Detectors":
        return cls(np.eye(dim), np.asarray(bias, dtype=np.float64))


@dataclass
class IoUTable:
    phi: np.ndarray  # [I, C]
    concept_ids: list[int]
    split: str

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["detector", "concept_id", "iou"])
            for i in range(self.phi.shape[0]):
                for j, cid in enumerate(self.concept_ids):
                    writer.writerow([i, cid, repr(float(self.phi[i, j]))])


@dataclass
class LabeledBasis:
    labels: np.ndarray  # concept_id per detector
    train_scores: np.ndarray
    degenerate: np.ndarray  # all-zero train rows, labeled by convention
    val_scores: np.ndarray | None = None


def binarized_map(
    image_features: np.ndarray, w_i: np.ndarray, b_i: float
) -> np.ndarray:
    """Strict-threshold detection map {0,1} for one image and one detector."""
    feats = np.asarray(image_features, dtype=np.float64)
    w_i = np.asarray(w_i, dtype=np.float64)
    if feats.ndim != 3 or feats.shape[2] != w_i.shape[0]:
        raise ValueError(f"features {feats.shape} incompatible with w {w_i.shape}")
    return (feats @ w_i > b_i).astype(np.uint8)


def upsample_binary_map(m: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear upsample of a binary map, re-binarized at 0.5."""
    h, w = m.shape
    if (h, w) == tuple(target):
        return np.ascontiguousarray(m, dtype=np.uint8)
    values = kernels.upsample_bilinear(np.asarray(m, dtype=np.float64), *target)
    return (values > 0.5).astype(np.uint8)


def _detector_maps(
    feats: np.ndarray, detectors: Detectors, target: tuple[int, int]
) -> np.ndarray:
    """All detector maps for one image, upsampled, as [I, H*W] uint8."""
    proj = feats.astype(np.float64) @ detectors.w.T  # [h, w, I]
    native = (proj > detectors.bias).astype(np.uint8)
    out = np.empty((detectors.count, target[0] * target[1]), dtype=np.uint8)
    for i in range(detectors.count):
        out[i] = upsample_binary_map(native[:, :, i], target).ravel()
    return out


def compute_iou_table(
    detectors: Detectors,
    feature_ds: FeatureDataset,
    concept_ds: ConceptDataset,
    split: str,
) -> IoUTable:
    """Dataset-level IoU between every detector and every concept.

    Intersections and unions are accumulated over all images of the split
    (absent masks count as empty) and divided once at the end; pairs whose
    total union is zero score 0.
    """
    ds = feature_ds.subset(split)
    if len(ds) == 0:
        raise DatasetError(f"split {split!r} holds no images")
    cids = concept_ds.concept_ids
    n_det, n_con = detectors.count, len(cids)
    inter = np.zeros((n_det, n_con), dtype=np.int64)
    map_area = np.zeros(n_det, dtype=np.int64)
    mask_area = np.zeros(n_con, dtype=np.int64)
    for entry in ds.images:
        feats = ds.load_features(entry.image_id)
        target = concept_ds.image_size(entry.image_id)
        maps = _detector_maps(feats, detectors, target)
        masks = np.zeros((n_con, target[0] * target[1]), dtype=np.uint8)
        for j, cid in enumerate(cids):
            m = concept_ds.load_mask(entry.image_id, cid)
            if m is not None:
                if m.shape != target:
                    raise DatasetError(
                        f"mask for ({entry.image_id}, {cid}) has shape {m.shape}, "
                        f"expected {target}"
                    )
                masks[j] = m.ravel()
        pair_inter, areas_i, areas_c = kernels.overlap_counts(maps, masks)
        inter += pair_inter
        map_area += areas_i
        mask_area += areas_c
    union = map_area[:, None] + mask_area[None, :] - inter
    phi = np.divide(
        inter, union, out=np.zeros_like(inter, dtype=np.float64), where=union > 0
    )
    return IoUTable(phi, list(cids), split)


def assign_labels(iou_train: IoUTable) -> LabeledBasis:
    """Per-detector argmax concept on the train table; ties and all-zero
    rows resolve to the lowest concept_id (all-zero rows flagged degenerate).
    """
    if iou_train.phi.size == 0:
        raise DatasetError("empty IoU table")
    order = np.argsort(iou_train.concept_ids)
    cids = np.asarray(iou_train.concept_ids)[order]
    phi = iou_train.phi[:, order]
    best = np.argmax(phi, axis=1)  # first max wins; columns sorted by id
    scores = phi[np.arange(phi.shape[0]), best]
    return LabeledBasis(
        labels=cids[best],
        train_scores=scores,
        degenerate=scores == 0.0,
    )


def validation_scores(
    detectors: Detectors,
    labeled: LabeledBasis,
    feature_ds: FeatureDataset,
    concept_ds: ConceptDataset,
    split: str = "val",
) -> np.ndarray:
    """phi(i, assigned label, split) for every detector."""
    table = compute_iou_table(detectors, feature_ds, concept_ds, split)
    col = {cid: j for j, cid in enumerate(table.concept_ids)}
    scores = np.array(
        [table.phi[i, col[int(cid)]] for i, cid in enumerate(labeled.labels)]
    )
    labeled.val_scores = scores
    return scores


def quantile_thresholds(
    feature_ds: FeatureDataset,
    directions: np.ndarray,
    q: float = 0.005,
) -> np.ndarray:
    """Per-direction bias at the top-q quantile of all pixel projections.

    Uses linear interpolation between order statistics (type-7), i.e.
    b_i = quantile(projections_i, 1 - q), so roughly a fraction q of the
    population strictly exceeds b_i.
    """
    if not 0.0 < q < 1.0:
        raise ValueError("quantile q must lie in (0, 1)")
    pixels = feature_ds.pixel_matrix().astype(np.float64)
    proj = pixels @ np.asarray(directions, dtype=np.float64).T
    return np.quantile(proj, 1.0 - q, axis=0, method="linear")


def save_labels_csv(
    labeled: LabeledBasis, concept_ds: ConceptDataset, path: str | Path
) -> None:
    names = {c.concept_id: c.name for c in concept_ds.concepts}
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["detector", "concept_id", "concept_name", "train_iou", "degenerate"]
        )
        for i, cid in enumerate(labeled.labels):
            writer.writerow(
                [
                    i,
                    int(cid),
                    names.get(int(cid), ""),
                    repr(float(labeled.train_scores[i])),
                    int(labeled.degenerate[i]),
                ]
            )
