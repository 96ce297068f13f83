"""Desk-scale experiments: relatedness extremes, AID versus task count, and the full
train / compress / certify / transfer chain.  Each returns a plain dict ready for JSON."""
from __future__ import annotations

import logging
import time

from .linalg import NetworkSpec, derive_seed
from .pipeline import compress_mtl, from_scratch, run_transfer, single_task_certificates
from .tasks import gen_permuted_labels, gen_teacher_tasks
from .training import TrainConfig, aid_search, id_search, run_shared_point, train_direct_baseline

log = logging.getLogger(__name__)

GEOMETRIC = (8, 16, 32, 64, 128, 256, 512, 1024)
K_SMALL = (1, 2, 3, 5, 10, 20)


def lk_grid(l_grid=GEOMETRIC, k_grid=K_SMALL):
    return [(l, k) for l in l_grid for k in k_grid]


def relatedness(mix: str = "gaussian", rank: int = 3, *, input_dim: int = 64, hidden=(128,),
                n: int = 20, m: int = 600, noise: float = 0.0, epochs: int = 60, lr: float = 0.01,
                seed: int = 7, d_grid=GEOMETRIC, l_grid=GEOMETRIC, k_grid=K_SMALL,
                cap_factor: float | None = None, on_point=None) -> dict:
    """ID and AID on teacher tasks with a chosen relatedness structure.

    With ``cap_factor`` the AID search stops above ``cap_factor * ID``, which
    is enough to decide whether the amortized count drops below that level.
    """
    t0 = time.time()
    ts = gen_teacher_tasks(input_dim, n, m, rank, noise, seed, mix=mix)
    spec = NetworkSpec(input_dim, tuple(hidden), 2)
    cfg = TrainConfig(epochs=epochs, lr=lr, seed=seed)
    baseline = train_direct_baseline(ts, spec, cfg, seed)
    ids = id_search(ts, spec, d_grid, cfg, seed=seed, baseline=baseline, on_point=on_point)
    cap = cap_factor * ids.d if (cap_factor is not None and ids.reached) else None
    aids = aid_search(ts, spec, lk_grid(l_grid, k_grid), cfg, seed=seed, baseline=baseline,
                      on_point=on_point, max_amortized=cap)
    aid_value = aids.amortized if aids.reached else None
    # an unreached capped search means every point up to the cap failed
    aid_floor = aid_value if aids.reached else cap
    return {"mix": mix, "rank": rank, "n": n, "m": m, "D": spec.D, "baseline": baseline,
            "target": ids.target, "id": ids.d, "id_reached": ids.reached, "aid": aid_value,
            "aid_l": aids.l, "aid_k": aids.k, "aid_reached": aids.reached, "aid_cap": cap,
            "aid_floor": aid_floor,
            "ratio": None if (aid_value is None or not ids.d) else aid_value / ids.d,
            "trace": ids.trace + aids.trace, "seconds": time.time() - t0}


def aid_versus_n(ns=(5, 10, 20), *, num_classes: int = 4, input_dim: int = 64, hidden=(128,),
                 m: int = 600, separation: float = 0.5, epochs: int = 60, lr: float = 0.01,
                 seed: int = 11, l_grid=GEOMETRIC[:-1], k_grid=K_SMALL, on_point=None) -> dict:
    """AID on nested permuted-label task sets of growing size."""
    t0 = time.time()
    base = {"kind": "clusters", "input_dim": input_dim, "num_classes": num_classes, "size": 20000,
            "seed": derive_seed(seed, "base") % (2 ** 31), "separation": separation}
    full = gen_permuted_labels(base, max(ns), m, seed)
    spec = NetworkSpec(input_dim, tuple(hidden), num_classes)
    cfg = TrainConfig(epochs=epochs, lr=lr, seed=seed)
    rows, trace = [], []
    for n in ns:
        ts = full.subset(range(n))
        baseline = train_direct_baseline(ts, spec, cfg, seed)
        res = aid_search(ts, spec, lk_grid(l_grid, k_grid), cfg, seed=seed, baseline=baseline,
                         on_point=on_point)
        rows.append({"n": n, "baseline": baseline, "target": res.target, "aid": res.amortized,
                     "l": res.l, "k": res.k, "reached": res.reached})
        trace += [{**r, "n": n} for r in res.trace]
    return {"rows": rows, "trace": trace, "D": spec.D, "seconds": time.time() - t0}


def end_to_end(*, input_dim: int = 64, hidden=(128,), n: int = 20, m: int = 600, rank: int = 3,
               noise: float = 0.0, l: int = 128, k: int = 10, d_single: int = 256,
               k_new_grid=(0, 5, 10), scratch_d_grid=(32, 64, 128, 256, 512), epochs: int = 60,
               lr: float = 0.01, seed: int = 7, delta: float = 0.05, out_dir=None) -> dict:
    """Train, quantise, fine-tune, encode and certify; then transfer to a held-out task."""
    t0 = time.time()
    family = gen_teacher_tasks(input_dim, n + 1, m, rank, noise, seed)
    ts, new = family.subset(range(n)), family.tasks[n]
    spec = NetworkSpec(input_dim, tuple(hidden), 2)
    cfg = TrainConfig(epochs=epochs, lr=lr, seed=seed)
    grids = {"l": GEOMETRIC, "k": K_SMALL, "d": GEOMETRIC, "k_new": (0, 1, 2, 5, 10, 20, 50, 100)}

    train_acc, eval_acc, model = run_shared_point(ts, spec, l, k, cfg, seed)
    mtl = compress_mtl(model, ts, cfg, grids=grids, delta=delta, seed=seed)
    single = single_task_certificates(ts, spec, d_single, cfg, seed=seed, grids=grids, delta=delta)

    transfers = []
    for k_new in k_new_grid:
        c = run_transfer(mtl.bundle, new.x_train, new.y_train, cfg, k_new=k_new, seed=seed,
                         grids=grids, delta=delta)
        transfers.append((c.certificate["kl"], k_new, c))
    _, _, best_t = min(transfers, key=lambda t: (t[0], t[1]))
    scratch = from_scratch(spec, new.x_train, new.y_train, cfg, scratch_d_grid, seed=seed,
                           grids=grids, delta=delta)
    if out_dir is not None:
        from pathlib import Path
        out = Path(out_dir)
        mtl.bundle.save(out / "mtl.bundle")
        best_t.bundle.save(out / "transfer.bundle")
    return {"D": spec.D, "n": n, "m_train": ts.m, "shared_train_acc": train_acc,
            "shared_eval_acc": eval_acc, "mtl": mtl.certificate, "mtl_bits": mtl.bundle.summary(),
            "mtl_candidates": mtl.candidates, "single": {kk: v for kk, v in single.items() if kk != "per_task"},
            "single_per_task": single["per_task"], "transfer": best_t.certificate,
            "transfer_all": [t[2].certificate for t in transfers], "scratch": scratch.certificate,
            "seconds": time.time() - t0}
