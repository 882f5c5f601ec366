"""Figures rendered next to the CSV outputs."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

plt.rcParams.update({
    "figure.figsize": (5.0, 3.4),
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
})


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_training_history(history_csv, path, metric="MRR", n=5):
    rows = [r for r in _read(history_csv) if r["metric"] == metric and int(r["N"]) == n]
    curves = defaultdict(list)
    for r in rows:
        curves[int(r["peer"])].append((int(r["epoch"]), float(r["value"])))
    fig, ax = plt.subplots()
    for peer, pts in sorted(curves.items()):
        xs, ys = zip(*sorted(pts))
        ax.plot(xs, ys, marker="o", ms=3, label=f"peer {peer}")
    ax.set_xlabel("epoch")
    ax.set_ylabel(f"valid {metric}@{n}")
    ax.legend()
    return _save(fig, path)


def plot_prune_curve(prune_csv, path, metric="MRR", n=5):
    """Relative metric change vs pruned fraction, with and without fine-tuning."""
    rows = [r for r in _read(prune_csv) if r["metric"] == metric and int(r["N"]) == n]
    rows.sort(key=lambda r: float(r["fraction"]))
    xs = [float(r["fraction"]) for r in rows]
    base = [float(r["base"]) for r in rows]
    fig, ax = plt.subplots()
    for col, label in (("pruned", "pruned"), ("finetuned", "pruned + fine-tune")):
        ys = [100.0 * (float(r[col]) - b) / b if b else 0.0 for r, b in zip(rows, base) if r[col] != ""]
        if ys:
            ax.plot(xs[: len(ys)], ys, marker="o", ms=3, label=label)
    ax.axhline(0.0, color="0.6", lw=0.8)
    ax.set_xlabel("fraction of weights pruned")
    ax.set_ylabel(f"change in {metric}@{n} (%)")
    ax.legend()
    return _save(fig, path)


def plot_grid_sweep(grid_csv, path, axis, metric="MRR", n=5, split="test", baseline=None):
    """Mean +/- std of a metric along one grid axis (e.g. alpha)."""
    rows = [r for r in _read(grid_csv) if r["metric"] == metric and int(r["N"]) == n and r["split"] == split]
    pts = []
    for r in rows:
        try:
            x = float(r[axis])
        except (KeyError, ValueError):
            x = r.get(axis, "")
        pts.append((x, float(r["mean"]), float(r["std"] or 0.0)))
    pts.sort(key=lambda p: (isinstance(p[0], str), p[0]))
    fig, ax = plt.subplots()
    if pts:
        xs = [p[0] for p in pts]
        labels = [str(x) for x in xs]
        pos = range(len(xs))
        ax.errorbar(list(pos), [p[1] for p in pts], yerr=[p[2] for p in pts], marker="o", ms=3, capsize=3,
                    label="peer collaboration")
        ax.set_xticks(list(pos))
        ax.set_xticklabels(labels)
    if baseline is not None:
        ax.axhline(baseline, color="C3", ls="--", lw=1, label="single model")
    ax.set_xlabel(axis)
    ax.set_ylabel(f"{split} {metric}@{n}")
    ax.legend()
    return _save(fig, path)


def plot_component_curves(histories: dict, path, metric="MRR", n=5):
    """Validation curves of several runs, e.g. scopes embedding/middle/softmax/all."""
    fig, ax = plt.subplots()
    for label, history_csv in histories.items():
        best = defaultdict(float)
        for r in _read(history_csv):
            if r["metric"] == metric and int(r["N"]) == n:
                e = int(r["epoch"])
                best[e] = max(best[e], float(r["value"]))
        if best:
            xs = sorted(best)
            ax.plot(xs, [best[x] for x in xs], marker="o", ms=3, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel(f"valid {metric}@{n}")
    ax.legend()
    return _save(fig, path)


def plot_invalid_ratio(curves: dict, path):
    """Invalid-layer ratio against entropy threshold, one line per model."""
    fig, ax = plt.subplots()
    for label, pts in curves.items():
        pts = sorted(pts)
        if pts:
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", ms=3, label=label)
    ax.set_xlabel("entropy threshold (nats)")
    ax.set_ylabel("invalid layer ratio")
    ax.set_ylim(bottom=0)
    ax.legend()
    return _save(fig, path)
