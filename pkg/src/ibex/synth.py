"""Synthetic feature/concept datasets with a known hidden rotation.

Pixels are built in a canonical space where each group of mutually
exclusive concepts activates exactly one of its axes (magnitude uniform in
[low, high]) on top of isotropic Gaussian noise, then rotated:
X_emitted = X_canonical @ R. Concept axis j of the emitted space is
therefore row j of R, and X_emitted @ R.T recovers the canonical sparsity.
The generator is the desk-scale oracle for the whole training pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import tensorstore
from .errors import ConfigError
from .orthobasis import n_params, basis_from_params
from .tensorstore import (
    ConceptDataset,
    FeatureDataset,
    load_concept_dataset,
    load_feature_dataset,
)


@dataclass(frozen=True)
class SynthConfig:
    dim: int = 16
    group_sizes: tuple[int, ...] = (4, 3)
    n_images: int = 200
    height: int = 8
    width: int = 8
    magnitude_low: float = 1.0
    magnitude_high: float = 2.0
    noise_sigma: float = 0.05
    rotation_seed: int = 7
    data_seed: int = 11
    val_fraction: float = 0.3

    def validate(self) -> None:
        if self.dim < 1 or self.height < 1 or self.width < 1:
            raise ConfigError("dim/height/width must be positive")
        if not self.group_sizes or any(g < 1 for g in self.group_sizes):
            raise ConfigError("group sizes must be positive")
        if sum(self.group_sizes) > self.dim:
            raise ConfigError("group sizes cannot exceed the dimensionality")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be nonnegative")
        if self.magnitude_high < self.magnitude_low or self.magnitude_low <= 0:
            raise ConfigError("need 0 < magnitude_low <= magnitude_high")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if self.n_images < 1:
            raise ConfigError("need at least one image")

    @property
    def n_concepts(self) -> int:
        return sum(self.group_sizes)


@dataclass
class SynthGroundTruth:
    rotation: np.ndarray  # [D, D]
    group_sizes: tuple[int, ...]
    concept_ids: list[int] = field(default_factory=list)

    @property
    def concept_axes(self) -> np.ndarray:
        """Emitted-space direction of every concept: rows of the rotation."""
        return self.rotation[: sum(self.group_sizes)]


def sample_rotation(cfg: SynthConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.rotation_seed)
    theta = rng.standard_normal(n_params(cfg.dim)) / np.sqrt(cfg.dim)
    return basis_from_params(theta, cfg.dim)


def generate_image_arrays(
    cfg: SynthConfig, rotation: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Deterministic per-image features and concept choices.

    Returns (features, choices): features[i] is [H, W, D] float64 in the
    emitted (rotated) space; choices[i] is [n_groups, H*W] holding the
    selected local concept per group per pixel.
    """
    cfg.validate()
    n_pix = cfg.height * cfg.width
    offsets = np.cumsum((0,) + cfg.group_sizes[:-1])
    child_seeds = np.random.SeedSequence(cfg.data_seed).spawn(cfg.n_images)
    features = []
    choices = []
    for i in range(cfg.n_images):
        rng = np.random.default_rng(child_seeds[i])
        canon = rng.normal(0.0, cfg.noise_sigma, size=(n_pix, cfg.dim))
        picks = np.empty((len(cfg.group_sizes), n_pix), dtype=np.int64)
        for g, size in enumerate(cfg.group_sizes):
            pick = rng.integers(size, size=n_pix)
            mag = rng.uniform(cfg.magnitude_low, cfg.magnitude_high, size=n_pix)
            canon[np.arange(n_pix), offsets[g] + pick] += mag
            picks[g] = pick
        emitted = canon @ rotation
        features.append(emitted.reshape(cfg.height, cfg.width, cfg.dim))
        choices.append(picks)
    return features, choices


def generate(
    cfg: SynthConfig, out_dir: str | Path
) -> tuple[FeatureDataset, ConceptDataset, SynthGroundTruth]:
    """Write a complete UIBF dataset + manifests + ground truth to disk.

    Emits features.json, concepts.json, per-image feature tensors, one
    binary mask per (image, concept), rotation.uibf and truth.json. The
    first ceil((1 - val_fraction) * n) images form the train split.
    """
    cfg.validate()
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rotation = sample_rotation(cfg)
    features, choices = generate_image_arrays(cfg, rotation)

    n_train = int(np.ceil((1.0 - cfg.val_fraction) * cfg.n_images))
    offsets = np.cumsum((0,) + cfg.group_sizes[:-1])
    image_docs = []
    mask_docs = []
    size_docs = []
    for i, feats in enumerate(features):
        image_id = f"img{i:04d}"
        rel = f"features/{image_id}.uibf"
        tensorstore.write_tensor(out / rel, feats.astype(np.float32))
        image_docs.append(
            {
                "image_id": image_id,
                "tensor_path": rel,
                "height": cfg.height,
                "width": cfg.width,
                "split": "train" if i < n_train else "val",
            }
        )
        size_docs.append(
            {"image_id": image_id, "height": cfg.height, "width": cfg.width}
        )
        for g, size in enumerate(cfg.group_sizes):
            for local in range(size):
                cid = int(offsets[g] + local)
                mask = (choices[i][g] == local).astype(np.float32)
                rel_mask = f"masks/{image_id}_c{cid:03d}.uibf"
                tensorstore.write_tensor(
                    out / rel_mask, mask.reshape(cfg.height, cfg.width)
                )
                mask_docs.append(
                    {"image_id": image_id, "concept_id": cid, "mask_path": rel_mask}
                )

    concept_docs = []
    for g, size in enumerate(cfg.group_sizes):
        for local in range(size):
            concept_docs.append(
                {
                    "concept_id": int(offsets[g] + local),
                    "name": f"g{g}_c{local}",
                    "category": f"group{g}",
                }
            )

    (out / "features.json").write_text(
        json.dumps(
            {"layer_dim": cfg.dim, "images": image_docs}, indent=2, sort_keys=True
        )
    )
    (out / "concepts.json").write_text(
        json.dumps(
            {"concepts": concept_docs, "images": size_docs, "masks": mask_docs},
            indent=2,
            sort_keys=True,
        )
    )
    tensorstore.write_tensor(out / "rotation.uibf", rotation.astype(np.float32))
    truth_doc = {
        "rotation_path": "rotation.uibf",
        "group_sizes": list(cfg.group_sizes),
        "concept_ids": [c["concept_id"] for c in concept_docs],
    }
    (out / "truth.json").write_text(json.dumps(truth_doc, indent=2, sort_keys=True))

    feature_ds = load_feature_dataset(out / "features.json")
    concept_ds = load_concept_dataset(out / "concepts.json", feature_ds)
    truth = SynthGroundTruth(
        rotation=rotation,
        group_sizes=cfg.group_sizes,
        concept_ids=truth_doc["concept_ids"],
    )
    return feature_ds, concept_ds, truth


def load_ground_truth(dataset_dir: str | Path) -> SynthGroundTruth:
    root = Path(dataset_dir)
    doc = json.loads((root / "truth.json").read_text())
    rotation = tensorstore.read_tensor(root / doc["rotation_path"]).astype(np.float64)
    return SynthGroundTruth(
        rotation=rotation,
        group_sizes=tuple(doc["group_sizes"]),
        concept_ids=list(doc["concept_ids"]),
    )


@dataclass
class MatchResult:
    assignment: list[tuple[int, int]]  # (concept axis index, detector row index)
    cosines: np.ndarray  # matched |cos| per concept axis
    min_cosine: float
    mean_cosine: float


def match_basis(w_rows: np.ndarray, truth: SynthGroundTruth) -> MatchResult:
    """Optimal one-to-one matching of detector rows to ground-truth axes.

    Maximizes the total |cosine| over assignments (sign- and
    permutation-invariant); solved exactly with an augmenting-path
    assignment solver.
    """
    w = np.asarray(w_rows, dtype=np.float64)
    if w.ndim != 2 or not np.all(np.isfinite(w)):
        raise ValueError("detector matrix must be finite and 2-D")
    axes = truth.concept_axes
    gain = np.abs(axes @ w.T)  # [C, I]
    rows, cols = linear_sum_assignment(-gain)
    cosines = gain[rows, cols]
    return MatchResult(
        assignment=list(zip(rows.tolist(), cols.tolist())),
        cosines=cosines,
        min_cosine=float(cosines.min()),
        mean_cosine=float(cosines.mean()),
    )
