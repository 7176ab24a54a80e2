"""Dataset export: feature cuboids and segmentation masks to UIBF."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from ibex import tensorstore

from .models import ExportError, load_model, record_activation, resolve_layer

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass
class ExportConfig:
    model: str = "stub-identity"
    layer: str = "last-layer"
    image_dir: Path = Path("images")
    mask_dir: Path | None = None
    vocabulary: Path | None = None
    splits: Path | None = None
    out_dir: Path = Path("export")
    pretrained: bool = True


def _list_images(image_dir: Path) -> list[Path]:
    if not image_dir.is_dir():
        raise ExportError(f"image folder not found: {image_dir}")
    paths = sorted(
        p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not paths:
        raise ExportError(f"no images in {image_dir}")
    return paths


def _load_splits(cfg: ExportConfig, image_ids: list[str]) -> dict[str, str]:
    if cfg.splits is None:
        return {iid: "train" for iid in image_ids}
    doc = json.loads(Path(cfg.splits).read_text())
    missing = [iid for iid in image_ids if iid not in doc]
    if missing:
        raise ExportError(f"split assignment missing for: {', '.join(missing)}")
    bad = {iid: s for iid, s in doc.items() if s not in ("train", "val")}
    if bad:
        raise ExportError(f"bad split values: {bad}")
    return {iid: doc[iid] for iid in image_ids}


def export_features(cfg: ExportConfig) -> Path:
    """Record the hooked layer for every image; write tensors + features.json.

    Deterministic given the model weights and preprocessing; the resolved
    layer and preprocessing description are recorded in the manifest.
    """
    model, preprocess = load_model(cfg.model, cfg.pretrained)
    paths = _list_images(Path(cfg.image_dir))
    splits = _load_splits(cfg, [p.stem for p in paths])
    out = Path(cfg.out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)

    layer_name = None
    layer_dim = None
    image_docs = []
    for path in paths:
        try:
            image = Image.open(path)
        except UnidentifiedImageError as exc:
            raise ExportError(f"cannot decode image {path}: {exc}") from exc
        batch = preprocess(image).unsqueeze(0)
        if layer_name is None:
            layer_name = resolve_layer(model, cfg.layer, batch)
        feats = record_activation(model, layer_name, batch)
        if layer_dim is None:
            layer_dim = feats.shape[2]
        elif feats.shape[2] != layer_dim:
            raise ExportError(
                f"{path.stem}: layer width {feats.shape[2]} != {layer_dim}"
            )
        rel = f"features/{path.stem}.uibf"
        tensorstore.write_tensor(out / rel, feats)
        image_docs.append(
            {
                "image_id": path.stem,
                "tensor_path": rel,
                "height": feats.shape[0],
                "width": feats.shape[1],
                "split": splits[path.stem],
            }
        )
    manifest = {
        "layer_dim": int(layer_dim),
        "images": image_docs,
        "provenance": {
            "model": cfg.model,
            "layer": layer_name,
            "preprocessing": preprocess.describe(),
        },
    }
    manifest_path = out / "features.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest_path


@dataclass
class MaskExportResult:
    manifest_path: Path
    all_zero: list[tuple[str, str]] = field(default_factory=list)  # flagged


def export_masks(cfg: ExportConfig) -> MaskExportResult:
    """Rasterize per-(image, concept) masks at each image's native size.

    Mask folder layout: <mask_dir>/<image_id>/<concept_name>.png. Every
    concept name must appear in the vocabulary file; masks for unknown
    images are rejected. All-zero masks are kept but flagged.
    """
    if cfg.mask_dir is None or cfg.vocabulary is None:
        raise ExportError("mask export needs --masks and --vocab")
    mask_dir = Path(cfg.mask_dir)
    if not mask_dir.is_dir():
        raise ExportError(f"mask folder not found: {mask_dir}")
    vocab_doc = json.loads(Path(cfg.vocabulary).read_text())
    concepts = vocab_doc.get("concepts", [])
    if not concepts:
        raise ExportError(f"empty concept vocabulary: {cfg.vocabulary}")
    by_name = {c["name"]: c for c in concepts}

    image_paths = {p.stem: p for p in _list_images(Path(cfg.image_dir))}
    out = Path(cfg.out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    mask_docs = []
    size_docs = {}
    flagged: list[tuple[str, str]] = []
    for image_subdir in sorted(p for p in mask_dir.iterdir() if p.is_dir()):
        image_id = image_subdir.name
        if image_id not in image_paths:
            raise ExportError(f"masks reference unknown image {image_id!r}")
        with Image.open(image_paths[image_id]) as im:
            width, height = im.size
        size_docs[image_id] = (height, width)
        for mask_path in sorted(image_subdir.glob("*.png")):
            name = mask_path.stem
            if name not in by_name:
                raise ExportError(
                    f"mask concept {name!r} not in vocabulary "
                    f"({', '.join(sorted(by_name))})"
                )
            mask_img = Image.open(mask_path).convert("L")
            if mask_img.size != (width, height):
                mask_img = mask_img.resize((width, height), Image.NEAREST)
            binary = (np.asarray(mask_img) > 127).astype(np.float32)
            if binary.sum() == 0:
                flagged.append((image_id, name))
            cid = int(by_name[name]["concept_id"])
            rel = f"masks/{image_id}_c{cid:03d}.uibf"
            tensorstore.write_tensor(out / rel, binary)
            mask_docs.append(
                {"image_id": image_id, "concept_id": cid, "mask_path": rel}
            )
    manifest = {
        "concepts": [
            {
                "concept_id": int(c["concept_id"]),
                "name": c["name"],
                "category": c.get("category", ""),
            }
            for c in concepts
        ],
        "images": [
            {"image_id": iid, "height": h, "width": w}
            for iid, (h, w) in sorted(size_docs.items())
        ],
        "masks": mask_docs,
    }
    manifest_path = out / "concepts.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return MaskExportResult(manifest_path, flagged)
