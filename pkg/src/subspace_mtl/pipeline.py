"""End-to-end compression and certification of trained subspace models."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .bounds import (BoundInputs, certify, single_task_bound, single_task_kl_bound,
                     single_task_summary, transfer_bound)
from .compression.bundle import (EncodedBundle, decode_bundle, encode_bundle, encode_single,
                                 encode_transfer, merged_grids)
from .compression.codebook import kmeans_1d
from .compression.finetune import finetune_quantized, snap
from .linalg import NetworkSpec, derive_seed
from .models import SubspaceModel
from .tasks import TaskSet
from .training import ConfigError, TrainConfig, evaluate, train, zero_one_risk

log = logging.getLogger(__name__)


def train_sets(ts: TaskSet):
    return [(t.x_train, t.y_train) for t in ts.tasks]


@dataclass
class Compressed:
    bundle: EncodedBundle
    model: SubspaceModel
    emp_risk: float
    m: int
    certificate: dict
    candidates: list = field(default_factory=list)


def _mtl_certificate(bundle, risk, n, m, delta):
    inp = BoundInputs(n=n, m=m, delta=delta, emp_risk=risk,
                      bits_meta=bundle.bits_meta, bits_multitask=bundle.bits_multitask)
    return certify(inp).to_dict()


def certify_bundle(bundle: EncodedBundle, ts: TaskSet, delta: float = 0.05,
                   parent: EncodedBundle | None = None) -> dict:
    """Decode, measure training zero-one error and apply the matching bounds."""
    model, _ = decode_bundle(bundle, parent)
    data = train_sets(ts)
    if bundle.kind == "shared":
        if len(data) != model.n_tasks:
            raise ValueError(f"bundle holds {model.n_tasks} tasks, data has {len(data)}")
        risk = zero_one_risk(model, data)
        return _mtl_certificate(bundle, risk, ts.n, ts.m, delta)
    if ts.n != 1:
        raise ValueError(f"{bundle.kind} bundles certify exactly one task, data has {ts.n}")
    risk = zero_one_risk(model, data)
    bits = bundle.total_bits
    return {"kind": bundle.kind, "emp_risk": risk, "m": ts.m, "bits": bits, "delta": delta,
            "slow": single_task_bound(ts.m, delta, risk, bits),
            "kl": single_task_kl_bound(ts.m, delta, risk, bits)}


def compress_mtl(model: SubspaceModel, ts: TaskSet, config: TrainConfig, *, grids=None,
                 delta: float = 0.05, finetune: bool = True, seed: int = 0) -> Compressed:
    """Quantise ``v`` then ``alpha`` and keep the codebook sizes with the smallest fast bound.

    Stage one tries every global size, fine-tunes ``v`` and scores it with
    ``alpha`` snapped to the largest local codebook.  Stage two sweeps the local
    size for the winning global codebook and fine-tunes ``alpha``.
    """
    g = merged_grids(grids)
    data = train_sets(ts)
    ft_epochs = config.finetune_epochs if finetune else 0
    n_v, n_alpha = np.unique(model.params["v"]).size, np.unique(model.params["alpha"]).size
    fitting_l = [r for r in g["r_l"] if r <= n_alpha]
    if not fitting_l or not any(r <= n_v for r in g["r_g"]):
        raise ConfigError(f"codebook grids r_g={g['r_g']} and r_l={g['r_l']} do not fit "
                          f"{n_v} shared and {n_alpha} per-task distinct values")
    r_l_probe = max(fitting_l)
    candidates, stage1 = [], []
    for r_g in (r for r in g["r_g"] if r <= n_v):
        gcb = kmeans_1d(model.params["v"], r_g, seed=derive_seed(seed, "kmeans-v", r_g), kind="global")
        if gcb.r != r_g:
            continue
        tuned, _ = finetune_quantized(model, {"v": gcb}, data, config, epochs=ft_epochs)
        lcb = kmeans_1d(tuned.params["alpha"], r_l_probe, seed=derive_seed(seed, "kmeans-a", r_l_probe))
        if lcb.r != r_l_probe:
            continue
        probe = snap(tuned, {"alpha": lcb})
        b = encode_bundle(probe, gcb, lcb, g)
        cert = _mtl_certificate(b, zero_one_risk(probe, data), ts.n, ts.m, delta)
        stage1.append((cert["fast"], r_g, tuned, gcb))
        candidates.append({"stage": "global", "r_g": r_g, "r_l": r_l_probe, **b.summary(),
                           "emp_risk": cert["inputs"]["emp_risk"], "fast": cert["fast"]})
    if not stage1:
        raise ConfigError("no global codebook size in the grid fits the shared coefficients")
    _, r_g, tuned, gcb = min(stage1, key=lambda t: (t[0], t[1]))
    best = None
    for r_l in fitting_l:
        lcb = kmeans_1d(tuned.params["alpha"], r_l, seed=derive_seed(seed, "kmeans-a", r_l))
        if lcb.r != r_l:
            continue
        final, _ = finetune_quantized(snap(tuned, {"v": gcb}), {"alpha": lcb}, data, config,
                                      epochs=ft_epochs)
        b = encode_bundle(final, gcb, lcb, g)
        risk = zero_one_risk(final, data)
        cert = _mtl_certificate(b, risk, ts.n, ts.m, delta)
        candidates.append({"stage": "local", "r_g": r_g, "r_l": r_l, **b.summary(),
                           "emp_risk": risk, "fast": cert["fast"]})
        if best is None or cert["fast"] < best.certificate["fast"]:
            best = Compressed(b, final, risk, ts.m, cert)
    if best is None:
        raise ConfigError("no local codebook size in the grid fits the task coefficients")
    best.candidates = candidates
    return best


def compress_single(model: SubspaceModel, x, y, config: TrainConfig, *, grids=None,
                    delta: float = 0.05, finetune: bool = True, seed: int = 0) -> Compressed:
    """Codebook size from the grid minimising the kl-form single-task bound."""
    g = merged_grids(grids)
    best, candidates = None, []
    distinct = np.unique(model.params["w"]).size
    for r in g["r"]:
        if r > distinct:
            continue
        cb = kmeans_1d(model.params["w"], r, seed=derive_seed(seed, "kmeans-w", r))
        if cb.r != r:
            continue
        final, _ = finetune_quantized(model, {"w": cb}, (x, y), config,
                                      epochs=config.finetune_epochs if finetune else 0)
        b = encode_single(final, cb, g)
        risk = 1.0 - evaluate(final, x, y)
        bound = single_task_kl_bound(len(y), delta, risk, b.total_bits)
        candidates.append({"r": r, "bits": b.total_bits, "emp_risk": risk, "kl": bound})
        if best is None or bound < best.certificate["kl"]:
            best = Compressed(b, final, risk, len(y), {
                "kind": "single", "emp_risk": risk, "m": len(y), "bits": b.total_bits, "delta": delta,
                "slow": single_task_bound(len(y), delta, risk, b.total_bits), "kl": bound})
    if best is None:
        raise ConfigError("no codebook size in the grid fits the coefficients")
    best.candidates = candidates
    return best


def single_task_certificates(ts: TaskSet, spec: NetworkSpec, d: int, config: TrainConfig, *,
                             seed: int = 0, grids=None, delta: float = 0.05,
                             finetune: bool = True) -> dict:
    """Per-task single-subspace models of dimension ``d``, each compressed and certified."""
    per_task, rows = [], []
    for j, task in enumerate(ts.tasks):
        model = SubspaceModel.single(spec, derive_seed(seed, "theta0"), d, derive_seed(seed, "P", d))
        train(model, (task.x_train, task.y_train), config)
        c = compress_single(model, task.x_train, task.y_train, config, grids=grids, delta=delta,
                            finetune=finetune, seed=derive_seed(seed, "task", j))
        per_task.append((c.m, c.emp_risk, c.bundle.total_bits))
        rows.append({"task": j, **c.certificate})
    return {"d": d, "per_task": rows, **single_task_summary(per_task, delta)}


def run_transfer(parent: EncodedBundle, x, y, config: TrainConfig, *, k_new: int, seed: int = 0,
                 grids=None, delta: float = 0.05, finetune: bool = True) -> Compressed:
    """Train ``(alpha, w)`` on a new task over the parent's frozen basis and certify it.

    Both codebook options are scored: reusing the parent's local codebook and
    sending a new one of every grid size.
    """
    parent_model, cbs = decode_bundle(parent)
    g = merged_grids(grids or parent.header["grids"])
    model = SubspaceModel.transfer(parent_model.spec, parent_model.theta0_seed, parent_model.basis_seed,
                                   parent_model.params["v"], k_new, derive_seed(seed, "P-transfer", k_new))
    train(model, (x, y), config)
    options = [(True, cbs["local"])]
    coeffs = np.concatenate([model.params["alpha"], model.params["w"]])
    for r in g["r"]:
        if r > np.unique(coeffs).size:
            continue
        cb = kmeans_1d(coeffs, r, seed=derive_seed(seed, "kmeans-t", r))
        if cb.r == r:
            options.append((False, cb))
    best, candidates = None, []
    for reuse, cb in options:
        final, _ = finetune_quantized(model, {"alpha": cb, "w": cb}, (x, y), config,
                                      epochs=config.finetune_epochs if finetune else 0)
        b = encode_transfer(final, cb, parent, reuse, g)
        risk = 1.0 - evaluate(final, x, y)
        bound = transfer_bound(len(y), delta, risk, b.total_bits)
        candidates.append({"reuse": reuse, "r": cb.r, "bits": b.total_bits, "emp_risk": risk, "kl": bound})
        if best is None or bound < best.certificate["kl"]:
            best = Compressed(b, final, risk, len(y), {
                "kind": "transfer", "k": model.k, "k_new": k_new, "reuse": reuse, "emp_risk": risk,
                "m": len(y), "bits": b.total_bits, "delta": delta, "kl": bound,
                "slow": transfer_bound(len(y), delta, risk, b.total_bits, kind="slow")})
    best.candidates = candidates
    return best


def from_scratch(spec: NetworkSpec, x, y, config: TrainConfig, d_grid, *, seed: int = 0,
                 grids=None, delta: float = 0.05, finetune: bool = True) -> Compressed:
    """Best single-subspace certificate over ``d_grid`` on one task (the no-transfer baseline)."""
    best = None
    for d in d_grid:
        model = SubspaceModel.single(spec, derive_seed(seed, "theta0"), d, derive_seed(seed, "P", d))
        train(model, (x, y), config)
        c = compress_single(model, x, y, config, grids=grids, delta=delta, finetune=finetune,
                            seed=derive_seed(seed, "scratch", d))
        c.certificate["d"] = d
        if best is None or c.certificate["kl"] < best.certificate["kl"]:
            best = c
    return best
