import json

import numpy as np
import pytest

from subspace_mtl.tasks import (DataError, from_provenance, gen_permuted_labels, gen_shuffled_pixels,
                                gen_teacher_tasks, load_csv, load_csv_tasks, load_idx, load_idx_dataset,
                                make_cluster_dataset, read_manifest, split_task, stratified_sample,
                                teacher_weights, write_idx, write_manifest)
from subspace_mtl.linalg import make_rng

BASE = {"kind": "clusters", "input_dim": 8, "num_classes": 4, "size": 600, "seed": 1}


def _same(a, b):
    for ta, tb in zip(a.tasks, b.tasks):
        for name in ("train", "val", "test"):
            xa, ya = ta.split(name)
            xb, yb = tb.split(name)
            np.testing.assert_array_equal(xa, xb)
            np.testing.assert_array_equal(ya, yb)


def test_split_is_disjoint_and_complete():
    x = np.arange(100, dtype=float)[:, None]
    t = split_task(x, np.zeros(100, dtype=int), seed=3)
    parts = [t.indices[k] for k in ("train", "val", "test")]
    assert [len(p) for p in parts] == [70, 20, 10]
    assert sorted(np.concatenate(parts).tolist()) == list(range(100))


def test_stratified_sample_proportions():
    y = np.array([0] * 600 + [1] * 300 + [2] * 100)
    idx = stratified_sample(y, 100, make_rng(0))
    assert len(set(idx.tolist())) == 100
    assert np.bincount(y[idx]).tolist() == [60, 30, 10]
    with pytest.raises(DataError):
        stratified_sample(y, 1001, make_rng(0))


def test_permuted_labels_deterministic_and_permuted():
    a = gen_permuted_labels(BASE, n=3, m=200, seed=5)
    b = gen_permuted_labels(BASE, n=3, m=200, seed=5)
    _same(a, b)
    base = make_cluster_dataset(8, 4, 600, 1)
    for t in a.tasks:
        perm = t.indices["permutation"]
        assert sorted(perm.tolist()) == [0, 1, 2, 3]
        np.testing.assert_array_equal(t.y_train, perm[base.y[t.indices["sample"]][t.indices["train"]]])


def test_shuffled_pixels_shape_and_errors():
    ts = gen_shuffled_pixels(BASE, n=2, m=100, seed=1, pixels_to_shuffle=4)
    src = ts.tasks[0].indices["pixel_source"]
    assert sorted(src.tolist()) == list(range(8)) and (src != np.arange(8)).sum() <= 4
    with pytest.raises(DataError):
        gen_shuffled_pixels(BASE, n=1, m=10, seed=1, pixels_to_shuffle=9)


def test_teacher_rank_structure():
    W = teacher_weights(10, 3, n=8, rank=2, seed=0)
    flat = W[:, 1:, :].reshape(8, -1)
    assert np.linalg.matrix_rank(flat) == 2
    assert np.all(W[:, 0, :] == 0)
    Wo = teacher_weights(10, 2, n=5, rank=5, seed=0, mix="orthogonal")
    G = Wo[:, 1, :] @ Wo[:, 1, :].T
    np.testing.assert_allclose(G, np.eye(5), atol=1e-12)
    with pytest.raises(DataError):
        teacher_weights(10, 2, n=5, rank=6, seed=0)
    with pytest.raises(DataError):
        teacher_weights(3, 2, n=5, rank=5, seed=0, mix="orthogonal")


def test_teacher_labels_follow_teacher_and_noise():
    ts = gen_teacher_tasks(6, n=2, m=2000, rank=1, noise=0.0, seed=2)
    W = teacher_weights(6, 2, 2, 1, 2)
    t = ts.tasks[1]
    np.testing.assert_array_equal(t.y_train, (t.x_train @ W[1].T).argmax(axis=1))
    noisy = gen_teacher_tasks(6, n=2, m=2000, rank=1, noise=0.3, seed=2)
    flips = np.mean(noisy.tasks[1].y_train != (noisy.tasks[1].x_train @ W[1].T).argmax(axis=1))
    assert 0.25 < flips < 0.35


def test_task_offset_draws_later_tasks_of_same_family():
    full = gen_teacher_tasks(6, n=4, m=100, rank=2, noise=0.0, seed=3)
    tail = gen_teacher_tasks(6, n=1, m=100, rank=2, noise=0.0, seed=3, task_offset=3)
    np.testing.assert_array_equal(full.tasks[3].x_train, tail.tasks[0].x_train)
    np.testing.assert_array_equal(full.tasks[3].y_train, tail.tasks[0].y_train)


def test_manifest_round_trip(tmp_path):
    ts = gen_permuted_labels(BASE, n=3, m=100, seed=9).subset([0, 2])
    write_manifest(tmp_path / "manifest.json", ts)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["n"] == 2 and man["provenance"]["subset"] == [0, 2]
    _same(read_manifest(tmp_path / "manifest.json"), ts)
    with pytest.raises(DataError):
        from_provenance({"generator": "nope"})


@pytest.mark.parametrize("dtype", [np.uint8, np.int8, np.int16, np.int32, np.float32, np.float64])
def test_idx_round_trip(tmp_path, dtype):
    arr = (make_rng(0).standard_normal((4, 3, 2)) * 50).astype(dtype)
    write_idx(tmp_path / "a.idx", arr)
    back = load_idx(tmp_path / "a.idx")
    assert back.shape == arr.shape
    np.testing.assert_array_equal(back, arr)


def test_idx_errors(tmp_path):
    p = tmp_path / "bad.idx"
    p.write_bytes(b"\x01\x00\x08\x01")
    with pytest.raises(DataError, match="magic"):
        load_idx(p)
    p.write_bytes(b"\x00\x00\x07\x01\x00\x00\x00\x01\x00")
    with pytest.raises(DataError, match="type code"):
        load_idx(p)
    p.write_bytes(b"\x00\x00\x08\x01\x00\x00\x00\x05\x00")
    with pytest.raises(DataError, match="promises"):
        load_idx(p)


def test_idx_dataset(tmp_path):
    imgs = np.full((3, 2, 2), 255, dtype=np.uint8)
    write_idx(tmp_path / "i.idx", imgs)
    write_idx(tmp_path / "l.idx", np.array([0, 2, 1], dtype=np.uint8))
    ds = load_idx_dataset(tmp_path / "i.idx", tmp_path / "l.idx")
    assert ds.x.shape == (3, 4) and np.all(ds.x == 1.0) and ds.num_classes == 3


SCHEMA = {"label": "y", "classes": ["no", "yes"], "task": "g",
          "columns": [{"name": "a", "type": "numeric"},
                      {"name": "c", "type": "categorical", "categories": ["r", "s"]}]}


def test_csv_load(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,c,y,g\n1.5,r,no,A\n2,s,yes,B\n3,s,yes,A\n")
    x, y, groups, names = load_csv(p, SCHEMA)
    np.testing.assert_array_equal(x, [[1.5, 1, 0], [2, 0, 1], [3, 0, 1]])
    assert y.tolist() == [0, 1, 1] and groups == ["A", "B", "A"]
    assert names == ["a", "c=r", "c=s"]
    ts = load_csv_tasks(p, SCHEMA, seed=0)
    assert ts.n == 2 and ts.num_classes == 2


@pytest.mark.parametrize("body,msg", [
    ("a,c,y,g\n1,r,no\n", "line 2"),
    ("a,c,y,g\nx,r,no,A\n", "non-numeric"),
    ("a,c,y,g\n1,q,no,A\n", "unknown category"),
    ("a,c,y,g\n1,r,maybe,A\n", "unknown label"),
    ("a,c,y,g\n,r,no,A\n", "missing value"),
    ("a,y,g\n1,no,A\n", "not in header"),
    ("", "empty"),
])
def test_csv_errors(tmp_path, body, msg):
    p = tmp_path / "d.csv"
    p.write_text(body)
    with pytest.raises(DataError, match=msg):
        load_csv(p, SCHEMA)
