"""Pruning experiment, ablation grids and report rendering."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import statistics
from pathlib import Path

from . import plots
from .config import RunConfig
from .cooperation import magnitude_prune
from .evaluation import evaluate, lookup
from .models import Model
from .numerics import Adam, rng_stream
from .training import DROPOUT, SAMPLE, Peer, Trainer, invalid_ratio_rows, run

log = logging.getLogger(__name__)

PRUNE_HEADER = ["fraction", "split", "metric", "N", "base", "pruned", "finetuned", "zeroed"]
DEFAULT_FRACTIONS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


def fine_tune(model: Model, ds, cfg: RunConfig, epochs: int, keep_masks: dict, seed_offset: int = 0) -> None:
    """Continue training with pruned weights held at zero."""
    trainer = Trainer(ds, cfg)
    stream = 100 + seed_offset
    peer = Peer(0, model, Adam(cfg.resolved_eta1), stream,
                sample_rng=rng_stream(cfg.seed, (SAMPLE, stream)),
                dropout_rng=rng_stream(cfg.seed, (DROPOUT, stream)))
    for epoch in range(1, epochs + 1):
        for batch in trainer.batches(peer, 1000 + epoch):
            trainer.step(peer, batch, keep_masks=keep_masks)


def run_prune_experiment(model: Model, ds, cfg: RunConfig, fractions=DEFAULT_FRACTIONS, fine_tune_epochs: int = 0,
                         scope=None, splits=("valid", "test"), out_csv=None) -> list[dict]:
    """Prune a trained model at each fraction, evaluate, optionally fine-tune and re-evaluate.

    The input model is left untouched; each fraction works on a fresh copy.
    """
    base_res = []
    for split in splits:
        base_res += evaluate(model, ds, split, exclude_history=cfg.exclude_history)
    rows = []
    for frac in fractions:
        work = type(model)(model.n_users, model.n_items, model.hp, params=model.params.copy())
        zeroed, masks = magnitude_prune(work.params, frac, scope, return_masks=True)
        pruned = []
        for split in splits:
            pruned += evaluate(work, ds, split, exclude_history=cfg.exclude_history)
        tuned = None
        if fine_tune_epochs > 0:
            fine_tune(work, ds, cfg, fine_tune_epochs, masks, seed_offset=int(round(frac * 1000)))
            tuned = []
            for split in splits:
                tuned += evaluate(work, ds, split, exclude_history=cfg.exclude_history)
        for r in pruned:
            rows.append({
                "fraction": frac, "split": r.split, "metric": r.metric, "N": r.n,
                "base": lookup(base_res, r.metric, r.n, r.split), "pruned": r.value,
                "finetuned": "" if tuned is None else lookup(tuned, r.metric, r.n, r.split),
                "zeroed": zeroed,
            })
    if out_csv:
        out_csv = Path(out_csv)
        out_csv.parent.mkdir(parents=True, exist_ok=True)
        with open(out_csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=PRUNE_HEADER)
            w.writeheader()
            for row in rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return rows


def degradation(rows, fraction, metric="MRR", n=5, split="test", column="pruned") -> float:
    """Relative drop (base - value) / base at one fraction."""
    for r in rows:
        if abs(r["fraction"] - fraction) < 1e-12 and r["metric"] == metric and r["N"] == n and r["split"] == split:
            return (r["base"] - r[column]) / r["base"]
    raise KeyError(fraction)


# -- grids --------------------------------------------------------------------

GRID_AXES = {"criterion", "alpha", "variant", "scope", "mode", "gamma", "eta2", "bins", "coop_every", "seed"}


def parse_axis(spec: str) -> tuple[str, list]:
    """``"alpha=10,20,30"`` -> ("alpha", [10, 20, 30])."""
    key, _, values = spec.partition("=")
    key = key.strip().replace("-", "_")
    if key not in GRID_AXES:
        raise ValueError(f"unknown grid axis {key!r}; choose from {sorted(GRID_AXES)}")
    out = []
    for v in values.split(","):
        v = v.strip()
        try:
            out.append(int(v))
        except ValueError:
            try:
                out.append(float(v))
            except ValueError:
                out.append(v)
    return key, out


def cell_id(cell: dict) -> str:
    return "_".join(f"{k}-{v}" for k, v in cell.items()) or "base"


def run_ablation_grid(base: RunConfig, axes: dict, seeds=(0, 1, 2), ds=None, out_dir=None) -> list[dict]:
    """One run per (cell, seed); aggregated mean/std per cell and metric.

    Cells whose ``summary.json`` already exists under ``out_dir`` are loaded
    instead of re-run, so an interrupted grid resumes where it stopped.
    """
    from .evaluation import read_metrics_csv

    out_dir = Path(out_dir) if out_dir else None
    keys = list(axes)
    agg_rows = []
    for values in itertools.product(*(axes[k] for k in keys)):
        cell = dict(zip(keys, values))
        per_seed = []
        for seed in seeds:
            cfg_out = None
            if out_dir:
                cfg_out = out_dir / "cells" / cell_id(cell) / f"seed{seed}"
                if (cfg_out / "summary.json").exists():
                    res = [r for r in read_metrics_csv(cfg_out / "metrics.csv") if r.model.count(":") == 1]
                    per_seed.append(res)
                    continue
            cfg = base.replace(seed=seed, out=str(cfg_out) if cfg_out else None,
                               run_id=f"{cell_id(cell)}-s{seed}", **cell)
            per_seed.append(run(cfg, ds).results)
        for r0 in per_seed[0]:
            vals = [lookup(res, r0.metric, r0.n, r0.split) for res in per_seed]
            agg_rows.append({**cell, "split": r0.split, "metric": r0.metric, "N": r0.n,
                             "mean": statistics.fmean(vals),
                             "std": statistics.stdev(vals) if len(vals) > 1 else 0.0,
                             "n_seeds": len(vals),
                             "values": json.dumps(vals)})
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        fields = keys + ["split", "metric", "N", "mean", "std", "n_seeds", "values"]
        with open(out_dir / "grid.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            w.writerows(agg_rows)
        (out_dir / "grid.json").write_text(json.dumps({"axes": axes, "seeds": list(seeds)}, indent=2))
    return agg_rows


def invalid_ratio_comparison(models: dict[str, Model], bins=100, out_csv=None) -> dict:
    curves = {label: invalid_ratio_rows(m.params, bins) for label, m in models.items()}
    if out_csv:
        with open(out_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["run_id", "threshold", "ratio"])
            for label, pts in curves.items():
                for th, r in pts:
                    w.writerow([label, th, repr(r)])
    return curves


# -- report -------------------------------------------------------------------

def render_report(out_dir) -> list[Path]:
    """Render every figure whose data CSV exists anywhere under ``out_dir``."""
    out_dir = Path(out_dir)
    fig_dir = out_dir / "figures"
    made = []
    for p in sorted(out_dir.rglob("prune.csv")):
        made.append(plots.plot_prune_curve(p, p.parent / "figures" / "prune_curve.png"))
    for p in sorted(out_dir.rglob("grid.csv")):
        meta = json.loads((p.parent / "grid.json").read_text()) if (p.parent / "grid.json").exists() else {}
        for axis in meta.get("axes", {}):
            made.append(plots.plot_grid_sweep(p, p.parent / "figures" / f"grid_{axis}.png", axis))
    histories = {str(p.parent.relative_to(out_dir)) or "run": p for p in sorted(out_dir.rglob("history.csv"))}
    if histories:
        made.append(plots.plot_component_curves(histories, fig_dir / "validation_curves.png"))
    curves = {}
    for p in sorted(out_dir.rglob("invalid_ratio.csv")):
        with open(p, newline="") as fh:
            for row in csv.DictReader(fh):
                curves.setdefault(row["run_id"], []).append((float(row["threshold"]), float(row["ratio"])))
    if curves:
        made.append(plots.plot_invalid_ratio(curves, fig_dir / "invalid_ratio.png"))
    rows = []
    for p in sorted(out_dir.rglob("metrics.csv")):
        with open(p, newline="") as fh:
            rows += list(csv.DictReader(fh))
    if rows:
        with open(out_dir / "report.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return made
