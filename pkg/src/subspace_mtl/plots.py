"""Matplotlib figures written next to the CSV/JSON outputs of the CLI."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp.png")
    fig.savefig(tmp, dpi=120, bbox_inches="tight")
    plt.close(fig)
    tmp.replace(path)
    return path


def plot_history(history: list[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    epochs = [r["epoch"] for r in history]
    ax.plot(epochs, [r["train_loss"] for r in history], label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy")
    if any("eval_acc" in r for r in history):
        ax2 = ax.twinx()
        ax2.plot(epochs, [r.get("eval_acc", float("nan")) for r in history], color="tab:orange",
                 label="eval accuracy")
        ax2.set_ylabel("eval accuracy")
        ax2.set_ylim(0, 1)
    ax.set_title("training history")
    return _save(fig, path)


def plot_search_trace(trace: list[dict], target: float, path, title: str = "dimension search") -> Path:
    """Eval accuracy against the per-task trainable count of every tried grid point."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for mode, marker in (("single", "o"), ("shared", "s")):
        rows = [r for r in trace if r["mode"] == mode]
        if rows:
            ax.scatter([float(r["amortized_count"]) for r in rows], [float(r["eval_acc"]) for r in rows],
                       marker=marker, label=mode)
    ax.axhline(target, color="gray", linestyle="--", label="target")
    ax.set_xscale("log")
    ax.set_xlabel("trainable parameters per task")
    ax.set_ylabel("eval accuracy")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def plot_aid_vs_n(rows: list[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    pts = [(r["n"], r["aid"]) for r in rows if r.get("aid") is not None]
    ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o")
    ax.set_xlabel("number of tasks n")
    ax.set_ylabel("amortized intrinsic dimension")
    ax.set_title("AID versus task count")
    return _save(fig, path)


def plot_certificates(table: dict[str, dict], path) -> Path:
    """Grouped bars per column of a certificate table (``{name: {row: value}}``)."""
    names = list(table)
    rows = sorted({key for col in table.values() for key in col})
    width = 0.8 / max(1, len(rows))
    fig, ax = plt.subplots(figsize=(max(4.5, 1.2 * len(names)), 3.2))
    for i, row in enumerate(rows):
        xs = [j + i * width for j in range(len(names))]
        ax.bar(xs, [table[name].get(row, float("nan")) for name in names], width, label=row)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(names))], names, rotation=20)
    ax.axhline(1.0, color="gray", linestyle=":")
    ax.set_ylabel("risk bound")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize="small")
    return _save(fig, path)


def plot_bits(summary: dict, path) -> Path:
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar(["meta", "multitask"], [summary["bits_meta"], summary["bits_multitask"]])
    ax.set_ylabel("bits")
    ax.set_title(f"{summary['bits_per_task']:.1f} bits per task")
    return _save(fig, path)
