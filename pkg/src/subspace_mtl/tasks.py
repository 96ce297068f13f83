"""Multi-task datasets: synthetic generators and IDX / CSV ingestion.

Every generated :class:`TaskSet` carries a provenance dict from which
:func:`from_provenance` rebuilds it bit-identically.
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import derive_seed, make_rng

SPLIT = (0.7, 0.2, 0.1)


class DataError(ValueError):
    """Malformed input file or impossible dataset request."""


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    num_classes: int

    def __len__(self):
        return len(self.y)


@dataclass
class Task:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    indices: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.y_train)

    def split(self, name: str):
        return getattr(self, f"x_{name}"), getattr(self, f"y_{name}")


@dataclass
class TaskSet:
    tasks: list[Task]
    num_classes: int
    provenance: dict

    @property
    def n(self) -> int:
        return len(self.tasks)

    @property
    def input_dim(self) -> int:
        return self.tasks[0].x_train.shape[1]

    @property
    def m(self) -> int:
        """Training examples per task; the minimum when tasks differ."""
        return min(t.m for t in self.tasks)

    def subset(self, idx) -> "TaskSet":
        idx = list(idx)
        prov = dict(self.provenance, subset=idx)
        return TaskSet([self.tasks[i] for i in idx], self.num_classes, prov)

    def manifest(self) -> dict:
        return {"n": self.n, "m_train": [t.m for t in self.tasks], "num_classes": self.num_classes,
                "input_dim": self.input_dim, "split": list(SPLIT), "provenance": self.provenance}


def split_task(x, y, seed, fractions=SPLIT) -> Task:
    """Seeded disjoint train/val/test split."""
    nx = len(y)
    perm = make_rng(seed).permutation(nx)
    n_tr = int(round(fractions[0] * nx))
    n_va = int(round(fractions[1] * nx))
    parts = perm[:n_tr], perm[n_tr:n_tr + n_va], perm[n_tr + n_va:]
    return Task(x[parts[0]], y[parts[0]], x[parts[1]], y[parts[1]], x[parts[2]], y[parts[2]],
                indices={"train": parts[0], "val": parts[1], "test": parts[2]})


def stratified_sample(y, m, rng) -> np.ndarray:
    """``m`` indices without replacement, class proportions preserved as far as rounding allows."""
    if m > len(y):
        raise DataError(f"requested {m} samples from a dataset of size {len(y)}")
    classes, counts = np.unique(y, return_counts=True)
    quota = np.floor(counts / counts.sum() * m).astype(int)
    short = m - quota.sum()
    order = np.argsort(-(counts / counts.sum() * m - quota), kind="stable")
    quota[order[:short]] += 1
    picks = []
    for c, q in zip(classes, quota):
        pool = np.flatnonzero(y == c)
        picks.append(rng.choice(pool, size=q, replace=False))
    out = np.concatenate(picks)
    rng.shuffle(out)
    return out


# -- synthetic bases --------------------------------------------------------

def make_cluster_dataset(input_dim: int, num_classes: int, size: int, seed: int,
                         separation: float = 1.0, noise_dim_scale: float = 1.0) -> Dataset:
    """Gaussian class clusters; an MNIST stand-in for the label/pixel task generators."""
    rng = make_rng(seed)
    means = rng.standard_normal((num_classes, input_dim)) * separation
    y = rng.integers(0, num_classes, size=size)
    x = means[y] + rng.standard_normal((size, input_dim)) * noise_dim_scale
    return Dataset(x, y, num_classes)


def _base_from_spec(base: dict) -> Dataset:
    kind = base.get("kind", "clusters")
    if kind == "clusters":
        return make_cluster_dataset(base["input_dim"], base["num_classes"], base["size"], base["seed"],
                                    base.get("separation", 1.0), base.get("noise", 1.0))
    if kind == "idx":
        return load_idx_dataset(base["images"], base["labels"])
    raise DataError(f"unknown base dataset kind {kind!r}")


def gen_permuted_labels(base: Dataset | dict, n: int, m: int, seed: int,
                        permutations: list | None = None) -> TaskSet:
    """``n`` tasks, each a stratified ``m``-subsample of ``base`` with its own label permutation."""
    prov = {"generator": "permuted_labels", "n": n, "m": m, "seed": seed,
            "base": base if isinstance(base, dict) else None}
    if isinstance(base, dict):
        base = _base_from_spec(base)
    L = base.num_classes
    tasks = []
    for j in range(n):
        rng = make_rng(derive_seed(seed, "task", j))
        idx = stratified_sample(base.y, m, rng)
        perm = rng.permutation(L) if permutations is None else np.asarray(permutations[j])
        task = split_task(base.x[idx], perm[base.y[idx]], derive_seed(seed, "split", j))
        task.indices.update(sample=idx, permutation=perm)
        tasks.append(task)
    return TaskSet(tasks, L, prov)


def gen_shuffled_pixels(base: Dataset | dict, n: int, m: int, seed: int,
                        pixels_to_shuffle: int = 200) -> TaskSet:
    """``n`` tasks, each applying its own fixed shuffle of a random coordinate subset."""
    prov = {"generator": "shuffled_pixels", "n": n, "m": m, "seed": seed,
            "pixels_to_shuffle": pixels_to_shuffle, "base": base if isinstance(base, dict) else None}
    if isinstance(base, dict):
        base = _base_from_spec(base)
    dim = base.x.shape[1]
    if pixels_to_shuffle > dim:
        raise DataError(f"cannot shuffle {pixels_to_shuffle} of {dim} input coordinates")
    tasks = []
    for j in range(n):
        rng = make_rng(derive_seed(seed, "task", j))
        idx = stratified_sample(base.y, m, rng)
        chosen = np.sort(rng.choice(dim, size=pixels_to_shuffle, replace=False))
        src = np.arange(dim)
        src[chosen] = chosen[rng.permutation(pixels_to_shuffle)]
        task = split_task(base.x[idx][:, src], base.y[idx], derive_seed(seed, "split", j))
        task.indices.update(sample=idx, pixel_source=src)
        tasks.append(task)
    return TaskSet(tasks, base.num_classes, prov)


def teacher_weights(input_dim: int, num_classes: int, n: int, rank: int, seed: int,
                    mix: str = "gaussian") -> np.ndarray:
    """Per-task teacher matrices ``(n, L, input_dim)`` spanned by ``rank`` basis matrices.

    Row 0 of every teacher is zero (argmax is invariant to a common shift), so
    the basis lives in the ``(L-1) * input_dim`` effective coordinates.
    ``mix`` selects the per-task coefficients: ``gaussian`` (random
    combinations), ``identical`` (one shared combination) or ``orthogonal``
    (task ``j`` uses element ``j`` of an orthonormal basis; needs ``rank == n``).
    """
    if not 1 <= rank <= max(n, 1):
        raise DataError(f"relatedness rank must lie in [1, n], got {rank}")
    rng = make_rng(derive_seed(seed, "teacher-basis"))
    flat = max(num_classes - 1, 1) * input_dim
    B = rng.standard_normal((rank, flat))
    if mix == "orthogonal":
        if rank != n:
            raise DataError("orthogonal teachers need rank == n")
        if rank > flat:
            raise DataError(f"cannot build {rank} orthogonal teachers in {flat} dimensions")
        qmat, _ = np.linalg.qr(B.T)
        B = qmat.T
        C = np.eye(n)
    elif mix == "identical":
        C = np.tile(rng.standard_normal(rank), (n, 1))
    elif mix == "gaussian":
        C = rng.standard_normal((n, rank))
    else:
        raise DataError(f"unknown teacher mix {mix!r}")
    M = C @ B
    M /= np.linalg.norm(M, axis=1, keepdims=True)
    W = np.zeros((n, num_classes, input_dim))
    W[:, 1:, :] = M.reshape(n, num_classes - 1, input_dim)
    return W


def gen_teacher_tasks(input_dim: int, n: int, m: int, rank: int, noise: float, seed: int,
                      num_classes: int = 2, mix: str = "gaussian", task_offset: int = 0) -> TaskSet:
    """Linear argmax teachers living in a shared span of ``rank`` matrices.

    With probability ``noise`` a label is replaced by a uniformly drawn
    different class.  ``task_offset`` draws tasks ``offset .. offset+n-1`` of
    the same family (same basis) so that held-out tasks can be generated later.
    """
    if not 0.0 <= noise <= 1.0:
        raise DataError("noise must lie in [0, 1]")
    prov = {"generator": "teacher", "input_dim": input_dim, "n": n, "m": m, "rank": rank,
            "noise": noise, "seed": seed, "num_classes": num_classes, "mix": mix,
            "task_offset": task_offset}
    total = task_offset + n
    W = teacher_weights(input_dim, num_classes, total, rank, seed, mix)
    tasks = []
    for j in range(task_offset, total):
        rng = make_rng(derive_seed(seed, "task", j))
        x = rng.standard_normal((m, input_dim))
        y = (x @ W[j].T).argmax(axis=1)
        flip = rng.random(m) < noise
        if num_classes > 1:
            shift = rng.integers(1, num_classes, size=m)
            y = np.where(flip, (y + shift) % num_classes, y)
        tasks.append(split_task(x, y, derive_seed(seed, "split", j)))
    return TaskSet(tasks, num_classes, prov)


GENERATORS = {"permuted_labels": gen_permuted_labels, "shuffled_pixels": gen_shuffled_pixels,
              "teacher": gen_teacher_tasks}


def from_provenance(prov: dict) -> TaskSet:
    """Rebuild a task set from its provenance descriptor."""
    prov = dict(prov)
    subset = prov.pop("subset", None)
    gen = prov.pop("generator")
    if gen == "teacher":
        ts = gen_teacher_tasks(**prov)
    elif gen in ("permuted_labels", "shuffled_pixels"):
        base = prov.pop("base")
        if base is None:
            raise DataError("provenance lacks a base dataset description")
        ts = GENERATORS[gen](base, **prov)
    elif gen == "csv":
        ts = load_csv_tasks(prov["path"], prov["schema"], prov["seed"])
    else:
        raise DataError(f"unknown generator {gen!r}")
    return ts.subset(subset) if subset is not None else ts


def write_manifest(path, taskset: TaskSet) -> None:
    from .io_utils import write_json
    write_json(path, taskset.manifest())


def read_manifest(path) -> TaskSet:
    with open(path) as fh:
        return from_provenance(json.load(fh)["provenance"])


# -- IDX --------------------------------------------------------------------

_IDX_TYPES = {0x08: np.uint8, 0x09: np.int8, 0x0B: np.dtype(">i2"), 0x0C: np.dtype(">i4"),
              0x0D: np.dtype(">f4"), 0x0E: np.dtype(">f8")}
_IDX_CODES = {np.dtype(np.uint8): 0x08, np.dtype(np.int8): 0x09, np.dtype(">i2"): 0x0B,
              np.dtype(">i4"): 0x0C, np.dtype(">f4"): 0x0D, np.dtype(">f8"): 0x0E}


def write_idx(path, array: np.ndarray) -> None:
    arr = np.asarray(array)
    dt = arr.dtype if arr.dtype.itemsize == 1 else arr.dtype.newbyteorder(">")
    if dt not in _IDX_CODES:
        raise DataError(f"dtype {arr.dtype} has no IDX type code")
    head = bytes([0, 0, _IDX_CODES[dt], arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    from .io_utils import atomic_write_bytes
    atomic_write_bytes(path, head + arr.astype(dt).tobytes())


def load_idx(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise DataError(f"{path}: bad IDX magic at byte offset 0")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_TYPES:
        raise DataError(f"{path}: unknown IDX type code 0x{code:02x} at byte offset 2")
    if len(raw) < 4 + 4 * ndim:
        raise DataError(f"{path}: truncated IDX header at byte offset {len(raw)}")
    shape = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    dt = np.dtype(_IDX_TYPES[code])
    expected = int(np.prod(shape)) * dt.itemsize
    payload = raw[4 + 4 * ndim:]
    if len(payload) != expected:
        raise DataError(f"{path}: payload is {len(payload)} bytes at byte offset {4 + 4 * ndim}, "
                        f"header promises {expected}")
    return np.frombuffer(payload, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))


def load_idx_dataset(images_path, labels_path) -> Dataset:
    """MNIST-style image/label pair; images flattened and scaled to [0, 1]."""
    images = load_idx(images_path)
    labels = load_idx(labels_path).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(np.float64)
    if images.dtype == np.uint8:
        x /= 255.0
    return Dataset(x, labels, int(labels.max()) + 1 if labels.size else 0)


# -- CSV --------------------------------------------------------------------

def _load_schema(schema):
    if isinstance(schema, (str, Path)):
        with open(schema) as fh:
            schema = json.load(fh)
    if "label" not in schema or "columns" not in schema:
        raise DataError("schema needs 'label' and 'columns' entries")
    return schema


def load_csv(path, schema) -> tuple[np.ndarray, np.ndarray, list[str], list[str]]:
    """Parse a CSV against a declared schema.

    Schema layout (JSON)::

        {"label": "income", "classes": ["<=50K", ">50K"],
         "task": "region",                      # optional grouping column
         "columns": [{"name": "age", "type": "numeric"},
                     {"name": "sex", "type": "categorical", "categories": ["F", "M"]}]}

    Numeric columns pass through; categorical columns are one-hot encoded in
    the declared category order.  Returns ``(x, y, task_ids, feature_names)``.
    """
    schema = _load_schema(schema)
    cols = schema["columns"]
    classes = schema.get("classes")
    task_col = schema.get("task")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        pos = {name: i for i, name in enumerate(header)}
        needed = [c["name"] for c in cols] + [schema["label"]] + ([task_col] if task_col else [])
        for name in needed:
            if name not in pos:
                raise DataError(f"{path}: schema column {name!r} not in header (line 1)")
        names = []
        for c in cols:
            if c["type"] == "numeric":
                names.append(c["name"])
            elif c["type"] == "categorical":
                names.extend(f"{c['name']}={v}" for v in c["categories"])
            else:
                raise DataError(f"unknown column type {c['type']!r} for {c['name']!r}")
        rows, labels, groups = [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise DataError(f"{path}: line {lineno} has {len(rec)} fields, header has {len(header)}")
            feats = []
            for c in cols:
                raw = rec[pos[c["name"]]].strip()
                if raw == "":
                    raise DataError(f"{path}: missing value for {c['name']!r} on line {lineno}")
                if c["type"] == "numeric":
                    try:
                        feats.append(float(raw))
                    except ValueError:
                        raise DataError(f"{path}: non-numeric {c['name']!r}={raw!r} on line {lineno}") from None
                else:
                    if raw not in c["categories"]:
                        raise DataError(f"{path}: unknown category {raw!r} for {c['name']!r} on line {lineno}")
                    feats.extend(1.0 if raw == v else 0.0 for v in c["categories"])
            lab = rec[pos[schema["label"]]].strip()
            if lab == "":
                raise DataError(f"{path}: missing label on line {lineno}")
            if classes is not None:
                if lab not in classes:
                    raise DataError(f"{path}: unknown label {lab!r} on line {lineno}")
                labels.append(classes.index(lab))
            else:
                try:
                    labels.append(int(lab))
                except ValueError:
                    raise DataError(f"{path}: non-integer label {lab!r} on line {lineno}") from None
            groups.append(rec[pos[task_col]].strip() if task_col else "")
            rows.append(feats)
    x = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(names))
    return x, np.asarray(labels, dtype=np.int64), groups, names


def load_csv_tasks(path, schema, seed: int) -> TaskSet:
    """One task per distinct value of the schema's ``task`` column (a single task if absent)."""
    schema_obj = _load_schema(schema)
    x, y, groups, _ = load_csv(path, schema_obj)
    L = len(schema_obj["classes"]) if schema_obj.get("classes") else int(y.max()) + 1
    tasks = []
    for j, g in enumerate(sorted(set(groups))):
        idx = np.flatnonzero(np.asarray(groups) == g)
        tasks.append(split_task(x[idx], y[idx], derive_seed(seed, "split", j)))
    return TaskSet(tasks, L, {"generator": "csv", "path": str(path),
                              "schema": schema_obj, "seed": seed})
