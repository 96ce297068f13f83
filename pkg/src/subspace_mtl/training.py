"""Optimisation loops, evaluation and the ID / AID dimension searches."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .linalg import NetworkSpec, accuracy, derive_seed, forward, loss_and_grad, make_rng
from .models import SubspaceModel, amortized_count
from .tasks import TaskSet

log = logging.getLogger(__name__)

LR_GRID = (0.1, 0.01, 0.001)
L_GRID = (20, 30, 40, 50, 60, 70, 80, 90, 100, 120, 150, 200, 300, 400, 500, 600, 700, 800,
          900, 1000, 1200, 1400, 1600, 1800, 2000, 2500, 3000, 3500, 4000, 5000, 6000, 7000, 8000)
K_GRID = (5, 10, 15, 20, 30, 35, 40, 50, 60, 70, 80, 90)


class TrainingDiverged(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 400
    lr: float = 0.01
    lr_grid: tuple = LR_GRID
    weight_decay: float = 5e-4
    batch_size: int = 64
    seed: int = 0
    finetune_epochs: int = 30
    finetune_lr: float = 1e-4
    eval_split: str = "val"

    def __post_init__(self):
        self.lr_grid = tuple(float(x) for x in self.lr_grid)
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr not in self.lr_grid:
            raise ConfigError(f"lr {self.lr} is not in the declared grid {self.lr_grid}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.eval_split not in ("val", "test", "train"):
            raise ConfigError(f"eval_split must be val, test or train, not {self.eval_split!r}")

    def with_lr(self, lr) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), "lr": lr})


class Adam:
    """Adam with L2 weight decay folded into the gradient."""

    def __init__(self, params: dict, lr: float, weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.wd, self.b1, self.b2, self.eps = lr, weight_decay, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for key, g in grads.items():
            if self.wd:
                g = g + self.wd * params[key]
            self.m[key] = self.b1 * self.m[key] + (1 - self.b1) * g
            self.v[key] = self.b2 * self.v[key] + (1 - self.b2) * g * g
            params[key] -= self.lr * (self.m[key] / c1) / (np.sqrt(self.v[key] / c2) + self.eps)


def _as_datasets(model: SubspaceModel, data) -> list[tuple[np.ndarray, np.ndarray]]:
    if isinstance(data, TaskSet):
        data = [(t.x_train, t.y_train) for t in data.tasks]
    elif isinstance(data, tuple):
        data = [data]
    data = list(data)
    if model.mode == "shared":
        if len(data) != model.n_tasks:
            raise ValueError(f"shared model has {model.n_tasks} tasks, got {len(data)} datasets")
    elif len(data) != 1:
        raise ValueError(f"{model.mode} mode trains on exactly one dataset, got {len(data)}")
    return data


def batch_loss_grad(model: SubspaceModel, batches, params=None, trainable=None):
    """Mean cross-entropy over per-task batches and its coefficient gradient.

    ``batches`` holds one ``(x, y)`` per task.  The loss is the uniform average
    of the per-task mean losses.
    """
    p = model.params if params is None else params
    spec = model.spec
    n = len(batches)
    if model.mode == "shared":
        thetas = model.realize_all(p)
        G = np.empty_like(thetas)
        total = 0.0
        for j, (x, y) in enumerate(batches):
            lj, gj = loss_and_grad(spec, thetas[j], x, y)
            total += lj
            G[j] = gj / n
        grads = model.shared_grad_all(G, p)
        loss = total / n
    else:
        x, y = batches[0]
        loss, g = loss_and_grad(spec, model.realize(None, p), x, y)
        grads = model.coefficient_grad(None, g, p)
    if trainable is not None:
        grads = {k: v for k, v in grads.items() if k in trainable}
    return loss, grads


def iterate_batches(datasets, batch_size, rng):
    """One epoch of aligned minibatches; shorter tasks wrap around."""
    sizes = [len(y) for _, y in datasets]
    steps = max(1, math.ceil(max(sizes) / batch_size))
    perms = [rng.permutation(s) for s in sizes]
    for step in range(steps):
        out = []
        for (x, y), perm, s in zip(datasets, perms, sizes):
            if s <= batch_size:
                idx = perm
            else:
                idx = np.take(perm, range(step * batch_size, (step + 1) * batch_size), mode="wrap")
            out.append((x[idx], y[idx]))
        yield out


def train(model: SubspaceModel, data, config: TrainConfig, eval_data=None,
          trainable: set | None = None, epochs: int | None = None, lr: float | None = None):
    """Minimise mean cross-entropy with Adam; returns the per-epoch history.

    ``data`` is a :class:`TaskSet`, a list of ``(x, y)`` per task, or one ``(x, y)``.
    Every run completes its full epoch budget.
    """
    datasets = _as_datasets(model, data)
    evals = None if eval_data is None else _as_datasets(model, eval_data)
    keys = set(model.params) if trainable is None else set(trainable)
    opt = Adam({k: model.params[k] for k in keys}, config.lr if lr is None else lr, config.weight_decay)
    rng = make_rng(derive_seed(config.seed, "batches", model.mode))
    history = []
    for epoch in range(config.epochs if epochs is None else epochs):
        losses = []
        for batches in iterate_batches(datasets, config.batch_size, rng):
            loss, grads = batch_loss_grad(model, batches, trainable=keys)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} (mode={model.mode}, lr={opt.lr})")
            losses.append(loss)
            opt.step(model.params, grads)
        row = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if evals is not None:
            row["eval_acc"] = evaluate_all(model, evals)
        history.append(row)
    if history:
        history[-1]["train_acc"] = evaluate_all(model, datasets)
    return history


def evaluate(model: SubspaceModel, x, y, task: int | None = None) -> float:
    return accuracy(model.spec, model.realize(task), x, y)


def evaluate_all(model: SubspaceModel, datasets) -> float:
    """Average per-task accuracy."""
    datasets = _as_datasets(model, datasets)
    if model.mode == "shared":
        thetas = model.realize_all()
        return float(np.mean([accuracy(model.spec, thetas[j], x, y) for j, (x, y) in enumerate(datasets)]))
    x, y = datasets[0]
    return evaluate(model, x, y)


def zero_one_risk(model: SubspaceModel, datasets) -> float:
    """Pooled training zero-one error over all examples of all tasks."""
    datasets = _as_datasets(model, datasets)
    errors = total = 0
    thetas = model.realize_all() if model.mode == "shared" else [model.realize()]
    for j, (x, y) in enumerate(datasets):
        errors += int(np.sum(forward(model.spec, thetas[j], x).argmax(axis=1) != y))
        total += len(y)
    return errors / total


# -- dimension searches ---------------------------------------------------------

@dataclass
class DimensionSearchResult:
    kind: str
    baseline: float
    target: float
    reached: bool
    best_eval_acc: float
    d: int | None = None
    l: int | None = None
    k: int | None = None
    amortized: float | None = None
    amortized_fraction: str | None = None
    lr: float | None = None
    trace: list = field(default_factory=list)
    cap: float | None = None

    def to_dict(self):
        return asdict(self)


TRACE_COLUMNS = ["mode", "d_or_l", "k", "lr", "seed", "train_acc", "eval_acc", "amortized_count"]


def _eval_sets(ts: TaskSet, split: str):
    return [t.split(split) for t in ts.tasks]


def train_direct_baseline(ts: TaskSet, spec: NetworkSpec, config: TrainConfig, seed: int) -> float:
    """Average eval accuracy of full-parameter single-task models (the baseline ``A``)."""
    accs = []
    for j, task in enumerate(ts.tasks):
        model = SubspaceModel.direct(spec, derive_seed(seed, "theta0"))
        train(model, (task.x_train, task.y_train), config)
        accs.append(evaluate(model, *task.split(config.eval_split)))
    return float(np.mean(accs))


def run_single_point(ts: TaskSet, spec: NetworkSpec, d: int, config: TrainConfig, seed: int):
    """Train one single-subspace model per task; returns (train_acc, eval_acc, models)."""
    tr, ev, models = [], [], []
    for task in ts.tasks:
        model = SubspaceModel.single(spec, derive_seed(seed, "theta0"), d, derive_seed(seed, "P", d))
        train(model, (task.x_train, task.y_train), config)
        tr.append(evaluate(model, task.x_train, task.y_train))
        ev.append(evaluate(model, *task.split(config.eval_split)))
        models.append(model)
    return float(np.mean(tr)), float(np.mean(ev)), models


def run_shared_point(ts: TaskSet, spec: NetworkSpec, l: int, k: int, config: TrainConfig, seed: int):
    model = SubspaceModel.shared(spec, derive_seed(seed, "theta0"), k, l, ts.n,
                                 derive_seed(seed, "Q", l, k), init_seed=derive_seed(seed, "v-init", l, k))
    train(model, ts, config)
    return (evaluate_all(model, [(t.x_train, t.y_train) for t in ts.tasks]),
            evaluate_all(model, _eval_sets(ts, config.eval_split)), model)


def _point_row(mode, a, b, config: TrainConfig, lrs, ts, spec, seed, n):
    """Train one grid point at every learning rate and keep the best eval accuracy."""
    best = None
    for lr in lrs:
        cfg = config.with_lr(lr)
        try:
            if mode == "single":
                tr, ev, _ = run_single_point(ts, spec, a, cfg, seed)
            else:
                tr, ev, _ = run_shared_point(ts, spec, a, b, cfg, seed)
        except TrainingDiverged as exc:
            log.warning("%s", exc)
            continue
        if best is None or ev > best[2]:
            best = (lr, tr, ev)
    if best is None:
        raise TrainingDiverged(f"{mode} point ({a}, {b}) diverged at every learning rate {lrs}")
    am = a if mode == "single" else amortized_count(a, b, n)
    return {"mode": mode, "d_or_l": a, "k": b, "lr": best[0], "seed": seed, "train_acc": best[1],
            "eval_acc": best[2], "amortized_count": float(am)}


def _scan(mode, points, target, *, ts, spec, config, seed, lrs, previous_trace, on_point, jobs):
    """Evaluate ``points`` in order until one reaches ``target``.

    With ``jobs > 1`` points are trained in ordered chunks of ``jobs`` processes;
    the reported minimum is the same as for a sequential scan.
    """
    done = {}
    for row in previous_trace or []:
        if row["mode"] == mode:
            done[(int(row["d_or_l"]), int(row["k"]))] = {
                **row, "d_or_l": int(row["d_or_l"]), "k": int(row["k"]), "lr": float(row["lr"]),
                "train_acc": float(row["train_acc"]), "eval_acc": float(row["eval_acc"]),
                "amortized_count": float(row["amortized_count"])}
    args = (config, tuple(lrs), ts, spec, seed, ts.n)
    trace = []
    pool = None
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        pool = ProcessPoolExecutor(max_workers=jobs)
    try:
        for start in range(0, len(points), max(1, jobs)):
            chunk = points[start:start + max(1, jobs)]
            todo = [pt for pt in chunk if pt not in done]
            if pool is not None and len(todo) > 1:
                futures = {pt: pool.submit(_point_row, mode, pt[0], pt[1], *args) for pt in todo}
                fresh = {pt: f.result() for pt, f in futures.items()}
            else:
                fresh = {pt: _point_row(mode, pt[0], pt[1], *args) for pt in todo}
            for pt in chunk:
                row = done.get(pt) or fresh[pt]
                if pt in fresh and on_point:
                    on_point(row)
                trace.append(row)
                if row["eval_acc"] >= target:
                    return trace, row
    finally:
        if pool is not None:
            pool.shutdown(cancel_futures=True)
    return trace, None


def _setup(ts, spec, config, seed, baseline, target, p, lrs):
    if baseline is None and target is None:
        baseline = train_direct_baseline(ts, spec, config, seed)
    target = p * baseline if target is None else target
    return baseline, target, ((config.lr,) if lrs is None else tuple(lrs))


def id_search(ts: TaskSet, spec: NetworkSpec, d_grid, config: TrainConfig, *, seed: int = 0,
              baseline: float | None = None, target: float | None = None, p: float = 0.9,
              lrs=None, previous_trace=None, on_point=None, jobs: int = 1) -> DimensionSearchResult:
    """Smallest grid ``d`` whose per-task single-subspace accuracy reaches ``p * A``.

    Grid points are tried in ascending order and the search stops at the first
    success.  ``previous_trace`` rows (from an earlier CSV) are reused instead of
    retrained.
    """
    baseline, target, lrs = _setup(ts, spec, config, seed, baseline, target, p, lrs)
    points = [(d, 0) for d in sorted(set(int(x) for x in d_grid))]
    trace, hit = _scan("single", points, target, ts=ts, spec=spec, config=config, seed=seed, lrs=lrs,
                       previous_trace=previous_trace, on_point=on_point, jobs=jobs)
    best_acc = max((r["eval_acc"] for r in trace), default=-1.0)
    if hit is None:
        return DimensionSearchResult("id", baseline, target, False, best_acc, trace=trace)
    d = hit["d_or_l"]
    return DimensionSearchResult("id", baseline, target, True, best_acc, d=d, amortized=float(d),
                                 amortized_fraction=str(d), lr=hit["lr"], trace=trace)


def aid_order(lk_grid, n: int):
    """Grid points sorted by amortized count, then smaller k, then smaller l."""
    pts = sorted(set((int(l), int(k)) for l, k in lk_grid))
    return sorted(pts, key=lambda lk: (amortized_count(lk[0], lk[1], n), lk[1], lk[0]))


def aid_search(ts: TaskSet, spec: NetworkSpec, lk_grid, config: TrainConfig, *, seed: int = 0,
               baseline: float | None = None, target: float | None = None, p: float = 0.9,
               lrs=None, previous_trace=None, on_point=None,
               max_amortized: float | None = None, jobs: int = 1) -> DimensionSearchResult:
    """Smallest ``lk/n + k`` over grid points whose multi-task accuracy reaches ``p * A``.

    Points are visited in increasing amortized cost (ties: smaller ``k``, then
    smaller ``l``), so the first success is the minimiser.  With
    ``max_amortized`` the search gives up before the first point above the cap;
    an unreached result then certifies that no cheaper point succeeds.
    """
    baseline, target, lrs = _setup(ts, spec, config, seed, baseline, target, p, lrs)
    points = [pt for pt in aid_order(lk_grid, ts.n)
              if max_amortized is None or amortized_count(pt[0], pt[1], ts.n) <= max_amortized]
    trace, hit = _scan("shared", points, target, ts=ts, spec=spec, config=config, seed=seed, lrs=lrs,
                       previous_trace=previous_trace, on_point=on_point, jobs=jobs)
    best_acc = max((r["eval_acc"] for r in trace), default=-1.0)
    if hit is None:
        return DimensionSearchResult("aid", baseline, target, False, best_acc, trace=trace,
                                     cap=None if max_amortized is None else float(max_amortized))
    l, k = hit["d_or_l"], hit["k"]
    am = amortized_count(l, k, ts.n)
    return DimensionSearchResult("aid", baseline, target, True, best_acc, l=l, k=k,
                                 amortized=float(am), amortized_fraction=str(am), lr=hit["lr"],
                                 trace=trace)
