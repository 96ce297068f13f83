"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
Outputs go to ``--out`` (or ``output`` in the config), resolved against
``$SUBSPACE_MTL_OUT`` when that is set and the path is relative.
"""
from __future__ import annotations

import argparse
import inspect
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import plots
from .bounds import BoundInputs, certify, single_task_bound, single_task_kl_bound
from .compression.arith import CorruptStreamError
from .compression.bundle import BundleError, EncodedBundle, decode_bundle, reencode
from .config import (load_config, load_tasks, network_spec, output_dir, require, train_config)
from .io_utils import read_csv, write_csv, write_json
from .linalg import ShapeError, derive_seed
from .models import SubspaceModel
from .pipeline import (certify_bundle, compress_mtl, compress_single, from_scratch, run_transfer,
                       train_sets)
from .tasks import DataError, TaskSet, write_manifest
from .training import (TRACE_COLUMNS, ConfigError, TrainingDiverged, aid_search, evaluate,
                       evaluate_all, id_search, train, train_direct_baseline, zero_one_risk)

ENV_OUT = "SUBSPACE_MTL_OUT"
EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
log = logging.getLogger("subspace_mtl")


class Run:
    """Resolved config, output directory and lazily loaded data for one command."""

    def __init__(self, args):
        self.args = args
        self.cfg = load_config(args.config, args.set or ())
        self.out = output_dir(self.cfg, getattr(args, "out", None), os.environ.get(ENV_OUT))
        self.plots = not getattr(args, "no_plots", False)
        self._tasks = None

    @property
    def tasks(self) -> TaskSet:
        if self._tasks is None:
            self._tasks = load_tasks(require(self.cfg, "data"))
        return self._tasks

    @property
    def spec(self):
        return network_spec(self.cfg, self.tasks)

    @property
    def tc(self):
        return train_config(self.cfg)

    @property
    def seed(self) -> int:
        return self.cfg["seed"]

    @property
    def grids(self) -> dict:
        """Hyperparameter grids sent with bundles: the search grids unless overridden."""
        s = self.cfg["search"]
        return {"l": s["l_grid"], "k": s["k_grid"], "d": s["d_grid"], **self.cfg["compression"]["grids"]}

    def path(self, name) -> Path:
        return self.out / name

    def echo_config(self):
        write_json(self.path("config.json"), self.cfg)

    def task(self, index=None):
        j = self.cfg["mode"]["task"] if index is None else index
        if not 0 <= j < self.tasks.n:
            raise ConfigError(f"mode.task={j} is out of range for {self.tasks.n} tasks")
        return self.tasks.tasks[j]


def _print(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=float))


def _build_model(run: Run) -> SubspaceModel:
    mode, spec, seed = run.cfg["mode"], run.spec, run.seed
    theta0 = derive_seed(seed, "theta0")
    if mode["kind"] == "direct":
        return SubspaceModel.direct(spec, theta0)
    if mode["kind"] == "single":
        d = int(mode["d"])
        return SubspaceModel.single(spec, theta0, d, derive_seed(seed, "P", d))
    l, k = int(mode["l"]), int(mode["k"])
    return SubspaceModel.shared(spec, theta0, k, l, run.tasks.n, derive_seed(seed, "Q", l, k),
                                init_seed=derive_seed(seed, "v-init", l, k))


# -- commands -----------------------------------------------------------------

def cmd_gen_data(run: Run) -> int:
    ts = run.tasks
    run.echo_config()
    write_manifest(run.path("manifest.json"), ts)
    rows = []
    for j, t in enumerate(ts.tasks):
        hist = np.bincount(t.y_train, minlength=ts.num_classes)
        rows.append({"task": j, "train": len(t.y_train), "val": len(t.y_val), "test": len(t.y_test),
                     "train_class_counts": " ".join(str(int(c)) for c in hist)})
    write_csv(run.path("tasks.csv"), rows)
    _print({"tasks": ts.n, "input_dim": ts.input_dim, "num_classes": ts.num_classes, "m_train": ts.m,
            "manifest": str(run.path("manifest.json"))})
    return 0


def cmd_train(run: Run) -> int:
    model = _build_model(run)
    tc, split = run.tc, run.cfg["training"]["eval_split"]
    if model.mode == "shared":
        data = train_sets(run.tasks)
        evals = [t.split(split) for t in run.tasks.tasks]
    else:
        task = run.task()
        data, evals = (task.x_train, task.y_train), task.split(split)
    run.echo_config()
    history = train(model, data, tc, eval_data=evals)
    model.save(run.path("model.ckpt"))
    write_csv(run.path("history.csv"), history, ["epoch", "train_loss", "eval_acc", "train_acc"])
    metrics = {"mode": model.mode, "train_acc": history[-1]["train_acc"],
               "eval_acc": evaluate_all(model, evals), "eval_split": split,
               "emp_risk": zero_one_risk(model, data), "trainable_count": model.trainable_count(),
               "amortized_count": float(model.amortized_count()),
               "amortized_fraction": str(model.amortized_count()), "D": model.spec.D}
    write_json(run.path("metrics.json"), metrics)
    if run.plots:
        plots.plot_history(history, run.path("history.png"))
    _print(metrics)
    return 0


def cmd_search(run: Run) -> int:
    kind = run.args.kind
    s, ts, tc = run.cfg["search"], run.tasks, run.tc
    trace_path = run.path(f"trace_{kind}.csv")
    base_path = run.path("baseline.json")
    previous = read_csv(trace_path) if (run.args.resume and trace_path.exists()) else []
    run.echo_config()
    if run.args.resume and base_path.exists():
        baseline = json.loads(base_path.read_text())["baseline"]
    else:
        baseline = train_direct_baseline(ts, run.spec, tc, run.seed)
        write_json(base_path, {"baseline": baseline, "eval_split": tc.eval_split})
    rows = list(previous)

    def on_point(row):
        rows.append(row)
        write_csv(trace_path, rows, TRACE_COLUMNS)
        log.info("%s point %s/%s eval_acc=%.4f", kind, row["d_or_l"], row["k"], row["eval_acc"])

    common = dict(seed=run.seed, baseline=baseline, p=s["p"], lrs=s["lrs"], previous_trace=previous,
                  on_point=on_point, jobs=run.args.jobs)
    if kind == "id":
        res = id_search(ts, run.spec, s["d_grid"], tc, **common)
    else:
        grid = [(l, k) for l in s["l_grid"] for k in s["k_grid"]]
        res = aid_search(ts, run.spec, grid, tc, max_amortized=s["max_amortized"], **common)
    write_csv(trace_path, res.trace, TRACE_COLUMNS)
    out = {k: v for k, v in res.to_dict().items() if k != "trace"}
    write_json(run.path(f"search_{kind}.json"), out)
    if run.plots:
        plots.plot_search_trace(res.trace, res.target, run.path(f"trace_{kind}.png"),
                                title=f"{kind.upper()} search")
    if not res.reached:
        log.warning("target %.4f unreachable on this grid (best %.4f)", res.target, res.best_eval_acc)
    _print(out)
    return 0


def cmd_encode(run: Run) -> int:
    model = SubspaceModel.load(run.args.checkpoint)
    tc, comp, delta = run.tc, run.cfg["compression"], run.cfg["certificate"]["delta"]
    run.echo_config()
    if model.mode == "shared":
        c = compress_mtl(model, run.tasks, tc, grids=run.grids, delta=delta,
                         finetune=comp["finetune"], seed=run.seed)
    elif model.mode == "single":
        task = run.task()
        c = compress_single(model, task.x_train, task.y_train, tc, grids=run.grids, delta=delta,
                            finetune=comp["finetune"], seed=run.seed)
    else:
        raise ConfigError(f"encode handles shared and single checkpoints, not {model.mode}")
    name = run.args.name
    c.bundle.save(run.path(f"{name}.bundle"))
    c.model.save(run.path(f"{name}.quantized.ckpt"))
    summary = {**c.bundle.summary(), "emp_risk": c.emp_risk, "m": c.m, "certificate": c.certificate}
    write_json(run.path(f"{name}.encode.json"), summary)
    write_csv(run.path(f"{name}.candidates.csv"), c.candidates)
    if run.plots:
        plots.plot_bits(c.bundle.summary(), run.path(f"{name}.bits.png"))
    _print(c.bundle.summary())
    return 0


def _load_bundle(path) -> EncodedBundle:
    try:
        return EncodedBundle.load(path)
    except FileNotFoundError:
        raise DataError(f"bundle file {path} does not exist") from None


def cmd_decode(args) -> int:
    bundle = _load_bundle(args.bundle)
    parent = _load_bundle(args.parent) if args.parent else None
    reencode(bundle, parent)
    model, cbs = decode_bundle(bundle, parent)
    out = Path(args.out) if args.out else Path(args.bundle).with_suffix(".decoded.ckpt")
    if not out.is_absolute() and os.environ.get(ENV_OUT) and args.out:
        out = Path(os.environ[ENV_OUT]) / out
    model.save(out)
    _print({**bundle.summary(), "checkpoint": str(out),
            "codebooks": {k: list(v.centers) for k, v in cbs.items() if hasattr(v, "centers")}})
    return 0


def _raw_columns(obj) -> dict:
    if "columns" in obj:
        return obj["columns"]
    return {"run": obj}


def certificate_table(columns: dict, delta_override=None) -> tuple[dict, dict]:
    """Table of bounds (rows) per named input column, plus full details."""
    table, details = {}, {}
    for name, col in columns.items():
        col = dict(col)
        if delta_override is not None:
            col["delta"] = delta_override
        cert = certify(BoundInputs.from_dict(col)).to_dict()
        row = {"mtl_slow": cert["slow"], "mtl_fast": cert["fast"], "mtl_pinsker": cert["pinsker"]}
        single = col.get("single")
        if single is not None:
            m = int(single.get("m", col["m"]))
            delta = float(col.get("delta", 0.05))
            row["single_kl"] = single_task_kl_bound(m, delta, float(single["emp_risk"]), float(single["bits"]))
            row["single_slow"] = single_task_bound(m, delta, float(single["emp_risk"]), float(single["bits"]))
        table[name] = row
        details[name] = {**cert, **{k: v for k, v in row.items() if k.startswith("single")}}
    return table, details


def _write_certificate(run_out: Path, table: dict, details: dict, make_plot: bool):
    rows = sorted({key for col in table.values() for key in col})
    write_json(run_out / "certificate.json", details)
    write_csv(run_out / "certificates.csv", [{"bound": r, **{n: table[n].get(r, "") for n in table}}
                                             for r in rows], ["bound", *table])
    if make_plot:
        plots.plot_certificates(table, run_out / "certificates.png")


def cmd_certify(args) -> int:
    env = os.environ.get(ENV_OUT)
    if args.inputs:
        try:
            with open(args.inputs) as fh:
                obj = json.load(fh)
        except FileNotFoundError:
            raise DataError(f"inputs file {args.inputs} does not exist") from None
        except ValueError as exc:
            raise DataError(f"inputs file {args.inputs} is not valid JSON: {exc}") from None
        try:
            table, details = certificate_table(_raw_columns(obj), args.delta)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None
        except (TypeError, ValueError) as exc:
            raise DataError(f"invalid bound inputs: {exc}") from None
        out = output_dir({"output": args.out}, None, env)
        _write_certificate(out, table, details, not args.no_plots)
        _print(table)
        return 0
    if not (args.bundle and args.config):
        raise ConfigError("certify needs --inputs, or --bundle together with --config")
    run = Run(args)
    delta = args.delta if args.delta is not None else run.cfg["certificate"]["delta"]
    bundle = _load_bundle(args.bundle)
    parent = _load_bundle(args.parent) if args.parent else None
    if bundle.kind == "shared":
        ts = run.tasks
    elif bundle.kind == "transfer":
        ts = load_tasks(require(run.cfg, "transfer.data")).subset([run.cfg["transfer"]["task"]])
    else:
        ts = run.tasks.subset([run.cfg["mode"]["task"]])
    cert = certify_bundle(bundle, ts, delta, parent)
    if bundle.kind == "shared":
        table = {"bundle": {"mtl_slow": cert["slow"], "mtl_fast": cert["fast"],
                            "mtl_pinsker": cert["pinsker"]}}
    else:
        table = {"bundle": {f"{bundle.kind}_kl": cert["kl"], f"{bundle.kind}_slow": cert["slow"]}}
    _write_certificate(run.out, table, {"bundle": cert}, run.plots)
    _print(cert)
    return 0


def cmd_transfer(run: Run) -> int:
    parent = _load_bundle(run.args.bundle)
    tr, comp, delta = run.cfg["transfer"], run.cfg["compression"], run.cfg["certificate"]["delta"]
    ts = load_tasks(require(run.cfg, "transfer.data"))
    if not 0 <= tr["task"] < ts.n:
        raise ConfigError(f"transfer.task={tr['task']} out of range for {ts.n} tasks")
    task = ts.tasks[tr["task"]]
    parent_model, _ = decode_bundle(parent)
    if task.x_train.shape[1] != parent_model.spec.input_dim or ts.num_classes != parent_model.spec.output_dim:
        raise DataError(f"new task has input dim {task.x_train.shape[1]} and {ts.num_classes} classes; "
                        f"the bundle's network expects {parent_model.spec.input_dim} and "
                        f"{parent_model.spec.output_dim}")
    run.echo_config()
    tc = run.tc
    k_grid = [run.args.k_new] if run.args.k_new is not None else tr["k_new_grid"]
    rows, best = [], None
    for k_new in k_grid:
        c = run_transfer(parent, task.x_train, task.y_train, tc, k_new=int(k_new), seed=run.seed,
                         grids=None, delta=delta, finetune=comp["finetune"])
        rows.append({**c.certificate, "eval_acc": evaluate(c.model, *task.split(tc.eval_split))})
        if best is None or c.certificate["kl"] < best.certificate["kl"]:
            best = c
    result = {"transfer": best.certificate}
    table = {"transfer": {"transfer_kl": best.certificate["kl"]}}
    if run.args.compare_scratch:
        sc = from_scratch(parent_model.spec, task.x_train, task.y_train, tc, run.cfg["search"]["d_grid"],
                          seed=run.seed, grids=run.grids,
                          delta=delta, finetune=comp["finetune"])
        result["scratch"] = sc.certificate
        table["from scratch"] = {"transfer_kl": sc.certificate["kl"]}
    best.bundle.save(run.path("transfer.bundle"))
    best.model.save(run.path("transfer.ckpt"))
    write_csv(run.path("transfer.csv"), rows)
    write_json(run.path("transfer_certificate.json"), result)
    if run.plots:
        plots.plot_certificates(table, run.path("transfer.png"))
    _print(result)
    return 0


def _report_params(text, fn) -> dict:
    if not text:
        return {}
    try:
        params = json.loads(text)
    except ValueError as exc:
        raise ConfigError(f"--params is not valid JSON: {exc}") from None
    if not isinstance(params, dict):
        raise ConfigError("--params must be a JSON object")
    allowed = set(inspect.signature(fn).parameters) - {"mix", "rank", "cap_factor", "on_point", "out_dir"}
    unknown = sorted(set(params) - allowed)
    if unknown:
        raise ConfigError(f"unknown experiment parameters {unknown}; allowed: {sorted(allowed)}")
    return params


def cmd_report(args) -> int:
    """Desk-scale experiments with JSON, CSV and PNG outputs."""
    from . import experiments as E
    env = os.environ.get(ENV_OUT)
    out = output_dir({"output": args.out}, None, env)
    fn = {"relatedness": E.relatedness, "aid-vs-n": E.aid_versus_n, "end-to-end": E.end_to_end}[args.experiment]
    overrides = _report_params(args.params, fn)
    if args.experiment == "relatedness":
        results = []
        for mix, rank, cap in (("gaussian", 3, None), ("orthogonal", overrides.get("n", 20), 0.9)):
            res = E.relatedness(mix, rank, cap_factor=cap, **overrides)
            trace = res.pop("trace")
            write_csv(out / f"relatedness_{mix}_trace.csv", trace, TRACE_COLUMNS)
            if not args.no_plots:
                plots.plot_search_trace(trace, res["target"], out / f"relatedness_{mix}.png",
                                        title=f"{mix} teachers")
            results.append(res)
        write_json(out / "relatedness.json", results)
        write_csv(out / "relatedness.csv", results)
        _print(results)
    elif args.experiment == "aid-vs-n":
        res = E.aid_versus_n(**overrides)
        write_csv(out / "aid_vs_n_trace.csv", res.pop("trace"), TRACE_COLUMNS + ["n"])
        write_csv(out / "aid_vs_n.csv", res["rows"])
        write_json(out / "aid_vs_n.json", res)
        if not args.no_plots:
            plots.plot_aid_vs_n(res["rows"], out / "aid_vs_n.png")
        _print(res["rows"])
    else:
        res = E.end_to_end(out_dir=out, **overrides)
        write_json(out / "end_to_end.json", res)
        table = {"multi-task": {"fast": res["mtl"]["fast"], "slow": res["mtl"]["slow"]},
                 "single-task": {"fast": res["single"]["avg_kl"], "slow": res["single"]["avg_slow"]},
                 "transfer": {"fast": res["transfer"]["kl"], "slow": res["transfer"]["slow"]},
                 "from scratch": {"fast": res["scratch"]["kl"], "slow": res["scratch"]["slow"]}}
        write_csv(out / "end_to_end.csv", [{"bound": b, **{n: table[n][b] for n in table}}
                                           for b in ("fast", "slow")], ["bound", *table])
        if not args.no_plots:
            plots.plot_certificates(table, out / "end_to_end.png")
            plots.plot_bits(res["mtl_bits"], out / "mtl_bits.png")
        _print(table)
    return 0


# -- argument parsing ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="subspace-mtl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def configured(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="experiment config (JSON)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config field, e.g. training.epochs=60 (repeatable)")
        sp.add_argument("--out", help=f"output directory (relative paths resolve under ${ENV_OUT})")
        sp.add_argument("--no-plots", action="store_true", help="skip PNG figures")
        return sp

    configured("gen-data", "materialise a task set and write its manifest")
    configured("train", "train one model (direct, single or shared mode)")
    sp = configured("search", "ID or AID grid search")
    sp.add_argument("--kind", choices=("id", "aid"), required=True)
    sp.add_argument("--resume", action="store_true", help="reuse points from an existing trace CSV")
    sp.add_argument("--jobs", type=int, default=1, help="grid points trained in parallel")
    sp = configured("encode", "quantise, fine-tune and encode a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--name", default="model", help="basename for the output files")

    sp = sub.add_parser("decode", help="decode a bundle back into a checkpoint")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--parent", help="multi-task bundle a transfer bundle was built on")
    sp.add_argument("--out", help="checkpoint path (default: next to the bundle)")

    sp = configured("certify", "generalisation certificates from raw inputs or a bundle")
    sp.add_argument("--inputs", help="JSON with bound inputs (one object or {'columns': {...}})")
    sp.add_argument("--bundle")
    sp.add_argument("--parent")
    sp.add_argument("--delta", type=float, help="confidence parameter override")

    sp = configured("transfer", "learn a new task on top of a multi-task bundle")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--k-new", type=int, help="fresh random directions (default: sweep the config grid)")
    sp.add_argument("--compare-scratch", action="store_true",
                    help="also certify the best from-scratch single-subspace model")

    sp = sub.add_parser("report", help="run a desk-scale experiment and render its figures")
    sp.add_argument("experiment", choices=("relatedness", "aid-vs-n", "end-to-end"))
    sp.add_argument("--out", default="report")
    sp.add_argument("--params", help="JSON object of keyword overrides for the experiment")
    sp.add_argument("--no-plots", action="store_true")
    return p


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "search": cmd_search, "encode": cmd_encode,
            "transfer": cmd_transfer}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "decode":
            return cmd_decode(args)
        if args.command == "certify":
            return cmd_certify(args)
        if args.command == "report":
            return cmd_report(args)
        return COMMANDS[args.command](Run(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, BundleError, CorruptStreamError, ShapeError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
