import json

import numpy as np
import pytest
from hypothesis import settings

from ibex import tensorstore

settings.register_profile("slow_ok", deadline=None, max_examples=50)
settings.load_profile("slow_ok")


def write_feature_manifest(root, images, layer_dim):
    """images: list of (image_id, array [H,W,D], split)."""
    (root / "features").mkdir(parents=True, exist_ok=True)
    docs = []
    for image_id, arr, split in images:
        rel = f"features/{image_id}.uibf"
        tensorstore.write_tensor(root / rel, np.asarray(arr, dtype=np.float32))
        docs.append(
            {
                "image_id": image_id,
                "tensor_path": rel,
                "height": arr.shape[0],
                "width": arr.shape[1],
                "split": split,
            }
        )
    path = root / "features.json"
    path.write_text(json.dumps({"layer_dim": layer_dim, "images": docs}))
    return path


def write_concept_manifest(root, concepts, masks, image_sizes):
    """concepts: (cid, name, category); masks: (image_id, cid, array [H,W])."""
    (root / "masks").mkdir(parents=True, exist_ok=True)
    mask_docs = []
    for image_id, cid, arr in masks:
        rel = f"masks/{image_id}_c{cid}.uibf"
        tensorstore.write_tensor(root / rel, np.asarray(arr, dtype=np.float32))
        mask_docs.append({"image_id": image_id, "concept_id": cid, "mask_path": rel})
    doc = {
        "concepts": [
            {"concept_id": cid, "name": name, "category": cat}
            for cid, name, cat in concepts
        ],
        "images": [
            {"image_id": iid, "height": h, "width": w}
            for iid, (h, w) in image_sizes.items()
        ],
        "masks": mask_docs,
    }
    path = root / "concepts.json"
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture
def tiny_dataset(tmp_path):
    """Two 2x2x3 images (train + val) with two concepts and full masks."""
    rng = np.random.default_rng(42)
    img_a = rng.normal(size=(2, 2, 3)).astype(np.float32)
    img_b = rng.normal(size=(2, 2, 3)).astype(np.float32)
    fpath = write_feature_manifest(
        tmp_path, [("a", img_a, "train"), ("b", img_b, "val")], 3
    )
    mask = np.array([[1, 0], [0, 1]], dtype=np.float32)
    cpath = write_concept_manifest(
        tmp_path,
        [(0, "left", "shape"), (1, "right", "shape")],
        [("a", 0, mask), ("a", 1, 1 - mask), ("b", 0, mask), ("b", 1, 1 - mask)],
        {"a": (2, 2), "b": (2, 2)},
    )
    feature_ds = tensorstore.load_feature_dataset(fpath)
    concept_ds = tensorstore.load_concept_dataset(cpath, feature_ds)
    return feature_ds, concept_ds
