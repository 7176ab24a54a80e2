import json
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ibex import tensorstore
from ibex.errors import DatasetError, TensorFormatError
from ibex.tensorstore import (
    iterate_pixel_batches,
    load_concept_dataset,
    load_feature_dataset,
    read_tensor,
    write_tensor,
)

from conftest import write_concept_manifest, write_feature_manifest


def test_roundtrip_identity(tmp_path):
    arr = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    path = tmp_path / "t.uibf"
    write_tensor(path, arr)
    back = read_tensor(path)
    assert back.shape == (2, 2)
    assert back.tobytes() == arr.tobytes()


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.uibf"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(TensorFormatError, match="magic"):
        read_tensor(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "short.uibf"
    with open(path, "wb") as f:
        f.write(b"UIBF")
        f.write(struct.pack("<II", 1, 1))
        f.write(struct.pack("<Q", 4))  # promises 4 elements
        f.write(struct.pack("<I", 0))
        f.write(struct.pack("<3f", 1.0, 2.0, 3.0))  # delivers 3
    with pytest.raises(TensorFormatError, match="payload"):
        read_tensor(path)


def test_nonfinite_rejected_both_ways(tmp_path):
    path = tmp_path / "nan.uibf"
    with pytest.raises(TensorFormatError):
        write_tensor(path, np.array([np.nan], dtype=np.float32))
    with open(path, "wb") as f:
        f.write(b"UIBF")
        f.write(struct.pack("<II", 1, 1))
        f.write(struct.pack("<Q", 1))
        f.write(struct.pack("<I", 0))
        f.write(struct.pack("<f", np.inf))
    with pytest.raises(TensorFormatError, match="non-finite"):
        read_tensor(path)


@given(
    shape=st.lists(st.integers(1, 5), min_size=1, max_size=4),
    seed=st.integers(0, 2**16),
)
def test_roundtrip_property(tmp_path_factory, shape, seed):
    rng = np.random.default_rng(seed)
    arr = rng.normal(size=shape).astype(np.float32)
    path = tmp_path_factory.mktemp("rt") / "x.uibf"
    write_tensor(path, arr)
    back = read_tensor(path)
    assert back.shape == tuple(shape)
    assert back.tobytes() == np.ascontiguousarray(arr).tobytes()


def test_load_feature_dataset(tmp_path):
    rng = np.random.default_rng(0)
    path = write_feature_manifest(
        tmp_path,
        [("a", rng.normal(size=(2, 3, 8)), "train"),
         ("b", rng.normal(size=(4, 4, 8)), "val")],
        8,
    )
    ds = load_feature_dataset(path)
    assert len(ds) == 2
    assert ds.layer_dim == 8
    assert ds.load_features("a").shape == (2, 3, 8)


def test_missing_tensor_file_named(tmp_path):
    path = write_feature_manifest(
        tmp_path, [("a", np.zeros((2, 2, 4)), "train")], 4
    )
    (tmp_path / "features" / "a.uibf").unlink()
    with pytest.raises(DatasetError, match="a.uibf"):
        load_feature_dataset(path)


def test_layer_dim_mismatch(tmp_path):
    rng = np.random.default_rng(0)
    write_feature_manifest(
        tmp_path, [("a", rng.normal(size=(2, 2, 8)), "train")], 8
    )
    doc = json.loads((tmp_path / "features.json").read_text())
    rel = "features/b.uibf"
    tensorstore.write_tensor(tmp_path / rel, rng.normal(size=(2, 2, 16)).astype("f4"))
    doc["images"].append(
        {"image_id": "b", "tensor_path": rel, "height": 2, "width": 2,
         "split": "train"}
    )
    (tmp_path / "features.json").write_text(json.dumps(doc))
    with pytest.raises(DatasetError, match="shared"):
        load_feature_dataset(tmp_path / "features.json")


def test_duplicate_image_id(tmp_path):
    path = write_feature_manifest(
        tmp_path, [("a", np.zeros((2, 2, 4)), "train")], 4
    )
    doc = json.loads(path.read_text())
    doc["images"].append(dict(doc["images"][0]))
    path.write_text(json.dumps(doc))
    with pytest.raises(DatasetError, match="duplicate"):
        load_feature_dataset(path)


def test_concept_dataset_loads(tiny_dataset):
    feature_ds, concept_ds = tiny_dataset
    assert len(concept_ds.concepts) == 2
    assert len(concept_ds.masks) == 4
    mask = concept_ds.load_mask("a", 0)
    assert mask.dtype == np.uint8
    assert set(np.unique(mask)) <= {0, 1}
    assert concept_ds.load_mask("b", 5) is None  # no record


def test_concept_orphan_image(tmp_path):
    fpath = write_feature_manifest(
        tmp_path, [("a", np.zeros((2, 2, 3)), "train")], 3
    )
    feature_ds = load_feature_dataset(fpath)
    cpath = write_concept_manifest(
        tmp_path,
        [(0, "c", "cat")],
        [("ghost", 0, np.ones((2, 2)))],
        {"a": (2, 2)},
    )
    with pytest.raises(DatasetError, match="ghost"):
        load_concept_dataset(cpath, feature_ds)


def test_empty_concepts_rejected(tmp_path):
    fpath = write_feature_manifest(
        tmp_path, [("a", np.zeros((2, 2, 3)), "train")], 3
    )
    feature_ds = load_feature_dataset(fpath)
    cpath = write_concept_manifest(tmp_path, [], [], {"a": (2, 2)})
    with pytest.raises(DatasetError, match="empty concept"):
        load_concept_dataset(cpath, feature_ds)


def test_mask_binarization_rule(tmp_path):
    fpath = write_feature_manifest(
        tmp_path, [("a", np.zeros((2, 2, 3)), "train")], 3
    )
    feature_ds = load_feature_dataset(fpath)
    fuzzy = np.array([[0.9, 0.3], [0.500001, 0.0]], dtype=np.float32)
    cpath = write_concept_manifest(
        tmp_path, [(0, "c", "cat")], [("a", 0, fuzzy)], {"a": (2, 2)}
    )
    ds = load_concept_dataset(cpath, feature_ds)
    assert ds.load_mask("a", 0).tolist() == [[1, 0], [1, 0]]


def test_mask_values_outside_unit_interval(tmp_path):
    fpath = write_feature_manifest(
        tmp_path, [("a", np.zeros((2, 2, 3)), "train")], 3
    )
    feature_ds = load_feature_dataset(fpath)
    cpath = write_concept_manifest(
        tmp_path, [(0, "c", "cat")],
        [("a", 0, np.full((2, 2), 7.0))], {"a": (2, 2)},
    )
    ds = load_concept_dataset(cpath, feature_ds)
    with pytest.raises(DatasetError, match="non-binary"):
        ds.load_mask("a", 0)


def test_batch_sizes_and_coverage(tmp_path):
    arr = np.arange(2 * 2 * 3, dtype=np.float32).reshape(2, 2, 3)
    path = write_feature_manifest(tmp_path, [("a", arr, "train")], 3)
    ds = load_feature_dataset(path)
    batches = list(iterate_pixel_batches(ds, 3, seed=0))
    assert [b.shape[0] for b in batches] == [3, 1]
    rows = np.concatenate(batches)
    expected = arr.reshape(-1, 3)
    assert sorted(map(tuple, rows.tolist())) == sorted(map(tuple, expected.tolist()))


def test_batch_order_seed_dependence(tmp_path):
    rng = np.random.default_rng(1)
    path = write_feature_manifest(
        tmp_path, [("a", rng.normal(size=(4, 4, 2)), "train")], 2
    )
    ds = load_feature_dataset(path)
    first = np.concatenate(list(iterate_pixel_batches(ds, 5, seed=7)))
    again = np.concatenate(list(iterate_pixel_batches(ds, 5, seed=7)))
    other = np.concatenate(list(iterate_pixel_batches(ds, 5, seed=8)))
    assert np.array_equal(first, again)
    assert not np.array_equal(first, other)
    assert sorted(map(tuple, first.tolist())) == sorted(map(tuple, other.tolist()))


def test_epoch_pixel_count(tmp_path):
    rng = np.random.default_rng(2)
    path = write_feature_manifest(
        tmp_path,
        [("a", rng.normal(size=(3, 5, 2)), "train"),
         ("b", rng.normal(size=(2, 2, 2)), "train")],
        2,
    )
    ds = load_feature_dataset(path)
    total = sum(b.shape[0] for b in iterate_pixel_batches(ds, 4, seed=0))
    assert total == 3 * 5 + 2 * 2


def test_iterate_errors(tmp_path):
    path = write_feature_manifest(tmp_path, [("a", np.zeros((2, 2, 3)), "val")], 3)
    ds = load_feature_dataset(path)
    with pytest.raises(ValueError):
        next(iterate_pixel_batches(ds, 0, seed=0))
    empty = ds.subset("train")
    with pytest.raises(DatasetError):
        next(iterate_pixel_batches(empty, 2, seed=0))


def test_manifest_order_independence(tmp_path):
    rng = np.random.default_rng(3)
    imgs = [(f"i{k}", rng.normal(size=(2, 2, 4)), "train") for k in range(4)]
    p1 = write_feature_manifest(tmp_path / "one", imgs, 4)
    p2 = write_feature_manifest(tmp_path / "two", imgs[::-1], 4)
    ds1 = load_feature_dataset(p1)
    ds2 = load_feature_dataset(p2)
    assert [e.image_id for e in ds1.images] == [e.image_id for e in ds2.images]
    for e1, e2 in zip(ds1.images, ds2.images):
        assert e1.image_id == e2.image_id
        assert np.array_equal(
            ds1.load_features(e1.image_id), ds2.load_features(e2.image_id)
        )
