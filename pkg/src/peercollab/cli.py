"""Command-line entry point: ingest, train, evaluate, prune, grid, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import data as data_mod
from . import experiments, plots
from .config import MODES, make_config
from .errors import PeerCollabError
from .evaluation import evaluate, write_metrics_csv, write_summary_json
from .models import MODELS, model_from_checkpoint
from .params import load_checkpoint
from .training import load_dataset, run

log = logging.getLogger("peercollab")

SCOPES = ("all", "embedding", "middle", "softmax")


def add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="flat YAML file; flags override its values")
    p.add_argument("--data", metavar="PATH", help="interaction TSV (default: bundled synthetic data)")
    p.add_argument("--model", choices=sorted(MODELS))
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--criterion", choices=("entropy", "l1"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--bins", type=int, metavar="M")
    p.add_argument("--scope", choices=SCOPES)
    p.add_argument("--eta1", type=float)
    p.add_argument("--eta2", type=float)
    p.add_argument("--seed", type=int, metavar="U64")
    p.add_argument("--epochs", type=int, metavar="K")
    p.add_argument("--t", type=int, metavar="K", help="sequence / history length")
    p.add_argument("--coop-every", dest="coop_every", metavar="{epoch,batches:K}")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--parallel", action="store_true", default=None, help="train the two peers on two workers")


RUN_KEYS = ("data", "model", "mode", "criterion", "alpha", "gamma", "bins", "scope", "eta1", "eta2", "seed",
            "epochs", "t", "coop_every", "out", "parallel")


def config_from_args(args, **extra):
    overrides = {k: getattr(args, k, None) for k in RUN_KEYS}
    overrides.update(extra)
    return make_config(args.config, **overrides)


def cmd_ingest(args) -> int:
    if args.synthetic:
        data_mod.write_synthetic(args.input, n_users=args.users, n_items=args.items, seed=args.seed or 0)
        log.info("wrote synthetic interactions to %s", args.input)
    ds = data_mod.ingest(args.input)
    stats = ds.stats()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        data_mod.write_interactions(ds, out / "interactions.tsv")
        (out / "stats.json").write_text(json.dumps(stats, indent=2))
    print(json.dumps(stats))
    return 0


def cmd_train(args) -> int:
    cfg = config_from_args(args)
    result = run(cfg)
    for r in result.results:
        print(f"{r.split:5s} {r.metric}@{r.n:<3d} {r.value:.4f}")
    if cfg.out:
        print(f"outputs in {cfg.out}")
    return 0


def _load_model(path):
    params, config = load_checkpoint(path)
    return model_from_checkpoint(params, config), config


def cmd_evaluate(args) -> int:
    model, ckpt_cfg = _load_model(args.checkpoint)
    ds = data_mod.ingest(args.data) if args.data else load_dataset(make_config())
    results = []
    for split in args.split:
        results += evaluate(model, ds, split, tag=ckpt_cfg.get("kind", ""))
    for r in results:
        print(f"{r.split:5s} {r.metric}@{r.n:<3d} {r.value:.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        run_id = Path(args.checkpoint).stem
        write_metrics_csv(out / "metrics.csv", run_id, results)
        write_summary_json(out / "summary.json", run_id, results, {"checkpoint": str(args.checkpoint)})
    return 0


def cmd_prune(args) -> int:
    model, ckpt_cfg = _load_model(args.checkpoint)
    run_cfg = {k: v for k, v in ckpt_cfg.get("run", {}).items() if k not in ("out", "parallel")}
    cfg = make_config(args.config, **run_cfg)
    if args.data:
        cfg = cfg.replace(data=args.data)
    ds = load_dataset(cfg)
    fractions = [float(f) for f in args.fractions.split(",")]
    out = Path(args.out or ".")
    rows = experiments.run_prune_experiment(model, ds, cfg, fractions, args.fine_tune_epochs,
                                            scope=args.scope if args.scope != "all" else None,
                                            out_csv=out / "prune.csv")
    plots.plot_prune_curve(out / "prune.csv", out / "figures" / "prune_curve.png")
    for r in rows:
        if r["metric"] == "MRR" and r["N"] == 5 and r["split"] == "test":
            print(f"rho={r['fraction']:.2f} base={r['base']:.4f} pruned={r['pruned']:.4f} finetuned={r['finetuned']}")
    return 0


def cmd_grid(args) -> int:
    base = config_from_args(args, out=None)
    axes = dict(experiments.parse_axis(a) for a in args.axis)
    if args.grid:
        grid_axes = json.loads(Path(args.grid).read_text())
        for k, v in grid_axes.items():
            axes[k.replace("-", "_")] = v
    seeds = [int(s) for s in args.seeds.split(",")]
    ds = load_dataset(base)
    rows = experiments.run_ablation_grid(base, axes, seeds, ds=ds, out_dir=args.out)
    for r in rows:
        if r["metric"] == "MRR" and r["N"] == 5 and r["split"] == "test":
            cell = ", ".join(f"{k}={r[k]}" for k in axes)
            print(f"{cell}: MRR@5 {r['mean']:.4f} +/- {r['std']:.4f}")
    if args.out:
        experiments.render_report(args.out)
    return 0


def cmd_report(args) -> int:
    made = experiments.render_report(args.out)
    for p in made:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="peercollab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="filter and remap an interaction log")
    p.add_argument("input", help="user<TAB>item<TAB>timestamp file")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--synthetic", action="store_true", help="first write the synthetic dataset to INPUT")
    p.add_argument("--users", type=int, default=1000)
    p.add_argument("--items", type=int, default=500)
    p.add_argument("--seed", type=int, metavar="U64")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a single model, a peer pair or a baseline")
    add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint")
    p.add_argument("checkpoint", help="checkpoint stem or .manifest path")
    p.add_argument("--data", metavar="PATH")
    p.add_argument("--split", nargs="+", default=["valid", "test"], choices=("valid", "test"))
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("prune", help="magnitude-prune a checkpoint at several fractions")
    p.add_argument("checkpoint")
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--data", metavar="PATH")
    p.add_argument("--fractions", default=",".join(str(f) for f in experiments.DEFAULT_FRACTIONS))
    p.add_argument("--fine-tune-epochs", dest="fine_tune_epochs", type=int, default=0)
    p.add_argument("--scope", choices=SCOPES, default="all")
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("grid", help="run an ablation grid over several seeds")
    add_run_flags(p)
    p.add_argument("--axis", action="append", default=[], metavar="KEY=V1,V2",
                   help="grid axis, e.g. alpha=10,20,30,40 (repeatable)")
    p.add_argument("--grid", metavar="PATH", help="JSON object mapping axis -> list of values")
    p.add_argument("--seeds", default="0,1,2")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("report", help="render figures from the CSVs under a run directory")
    p.add_argument("--out", metavar="DIR", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PeerCollabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
