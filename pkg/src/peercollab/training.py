"""Training loops for single models, peer pairs and the baselines.

Each peer owns its model, Adam state and random streams, so between two
cooperation barriers the peers are fully independent. Serial mode
alternates the peers batch by batch on one worker; parallel mode runs each
peer's segment on its own thread and exchanges weights through checkpoints
at the barrier. Both orderings produce the same weights.
"""

from __future__ import annotations

import csv
import logging
import math
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import islice, zip_longest
from pathlib import Path

import numpy as np

from . import data as data_mod
from .config import PC_MODES, RunConfig
from .cooperation import (LWConfig, PWConfig, CooperationReport, append_cooperation_log, ensemble_scores,
                          lw_cooperate, noise_reactivate, pw_cooperate)
from .criteria import EntropyConfig, invalid_layer_ratio
from .errors import ConfigurationError, NumericalError
from .evaluation import EvalResult, evaluate, lookup, write_metrics_csv, write_summary_json
from .models import Model, build_model
from .numerics import Adam, rng_stream
from .params import ParameterSet, check_same_structure, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

# stream ids under a run seed: (purpose, peer)
INIT, SAMPLE, DROPOUT, NOISE = 0, 1, 2, 3
SELECT_METRIC = ("MRR", 5)


@dataclass
class Peer:
    index: int
    model: Model
    opt: Adam
    data_stream: int
    sample_rng: np.random.Generator
    dropout_rng: np.random.Generator
    best_params: ParameterSet | None = None
    best_val: float = -math.inf
    best_epoch: int = -1
    last_loss: float = float("nan")

    @property
    def params(self) -> ParameterSet:
        return self.model.params


@dataclass
class RunResult:
    config: RunConfig
    peers: list[Peer]
    selected: int
    results: list[EvalResult]
    peer_results: dict[int, list[EvalResult]] = field(default_factory=dict)
    history: list[tuple] = field(default_factory=list)
    reports: list[CooperationReport] = field(default_factory=list)
    stopped_epoch: int = 0

    @property
    def model(self) -> Model:
        """The single model used for inference (the selected peer at its best epoch)."""
        return self.peers[self.selected].model

    def value(self, metric="MRR", n=5, split="test") -> float:
        return lookup(self.results, metric, n, split)


class Trainer:
    """Builds per-model batch streams over a dataset."""

    def __init__(self, ds: data_mod.InteractionDataset, cfg: RunConfig):
        self.ds = ds
        self.cfg = cfg
        self.hp = cfg.hyperparams
        kind = cfg.model
        if kind == "dnn":
            self.examples = data_mod.dnn_examples(ds, self.hp.seq_len)
        elif kind == "saslite":
            self.examples = data_mod.sas_examples(ds, self.hp.seq_len)
        else:
            self.examples = None
            self.train_sets = ds.train_sets()

    def n_batches(self) -> int:
        n = self.ds.n_train if self.examples is None else len(self.examples[0])
        return max(1, math.ceil(n / self.hp.batch_size))

    def batches(self, peer: Peer, epoch: int):
        b = self.hp.batch_size
        if self.examples is None:
            for _ in range(self.n_batches()):
                yield data_mod.sample_bpr_triples(self.ds, b, peer.sample_rng, self.train_sets)
            return
        inputs, targets = self.examples
        order = data_mod.shuffled_epoch(len(inputs), self.cfg.seed, epoch, stream=peer.data_stream)
        for start in range(0, len(order), b):
            idx = order[start:start + b]
            if self.cfg.model == "dnn":
                yield inputs[idx], targets[idx]
            else:
                pos = targets[idx]
                yield inputs[idx], pos, data_mod.sample_negatives(pos, self.ds.n_items, peer.sample_rng)

    def make_peer(self, index: int, learning_rate: float, data_stream: int | None = None) -> Peer:
        seed = self.cfg.seed
        stream = index if data_stream is None else data_stream
        model = build_model(self.cfg.model, self.ds.n_users, self.ds.n_items, self.hp,
                            rng=rng_stream(seed, (INIT, index)))
        return Peer(index, model, Adam(learning_rate), stream,
                    sample_rng=rng_stream(seed, (SAMPLE, stream)),
                    dropout_rng=rng_stream(seed, (DROPOUT, stream)))

    def step(self, peer: Peer, batch, keep_masks=None) -> float:
        loss, grads = peer.model.loss_and_grads(batch, rng=peer.dropout_rng)
        if not np.isfinite(loss):
            raise NumericalError(f"peer {peer.index}: loss diverged ({loss})")
        flat = peer.params.flat()
        peer.opt.step(flat, grads)
        if keep_masks:
            for name, mask in keep_masks.items():
                peer.params[name].weight[~mask] = 0.0
        peer.last_loss = float(loss)
        return float(loss)


def _segments(it, size):
    """Split an iterator into lists of ``size`` (None: one segment)."""
    if size is None:
        yield list(it)
        return
    while True:
        chunk = list(islice(it, size))
        if not chunk:
            return
        yield chunk


class PeerRun:
    def __init__(self, ds, cfg: RunConfig):
        self.ds = ds
        self.cfg = cfg
        self.trainer = Trainer(ds, cfg)
        self.out = Path(cfg.out) if cfg.out else None
        self.entropy_cfg = EntropyConfig(cfg.bins)
        self.history: list[tuple] = []
        self.reports: list[CooperationReport] = []
        self._noise_rng = rng_stream(cfg.seed, (NOISE, 0))
        self.peers = self._make_peers()

    def _make_peers(self) -> list[Peer]:
        cfg = self.cfg
        t = self.trainer
        if cfg.mode in ("single", "pc-noise"):
            return [t.make_peer(0, cfg.resolved_eta1)]
        if cfg.mode == "ensemble-m2":
            # two independently trained copies of the baseline
            return [t.make_peer(0, cfg.resolved_eta1), t.make_peer(1, cfg.resolved_eta1)]
        shared = 0 if cfg.variant == "ds" else None
        peers = [t.make_peer(0, cfg.resolved_eta1, shared), t.make_peer(1, cfg.resolved_eta2, shared)]
        check_same_structure(peers[0].params, peers[1].params)
        return peers

    # -- one epoch ---------------------------------------------------------

    def _run_segment_serial(self, segs):
        for pair in zip_longest(*segs):
            for peer, batch in zip(self.peers, pair):
                if batch is not None:
                    self.trainer.step(peer, batch)

    def _run_segment_parallel(self, segs, pool):
        def work(peer, seg):
            for batch in seg:
                self.trainer.step(peer, batch)
        list(pool.map(work, self.peers, segs))

    def _barrier_exchange(self, epoch: int, seg_no: int) -> list[ParameterSet]:
        """Parallel mode: each worker's weights go through a checkpoint file."""
        base = (self.out or self._scratch) / "barrier"
        loaded = []
        for peer in self.peers:
            stem = save_checkpoint(peer.params, base / f"peer{peer.index}", {"epoch": epoch, "segment": seg_no})
            loaded.append(load_checkpoint(stem)[0])
        return loaded

    def _cooperate(self, epoch: int, seg_no: int, pool) -> None:
        cfg = self.cfg
        if cfg.mode == "pc-noise":
            n = noise_reactivate(self.peers[0].params, cfg.gamma, cfg.noise_std, self._noise_rng, cfg.scope_roles)
            log.debug("epoch %d: %d weights re-drawn", epoch, n)
            return
        if cfg.mode not in PC_MODES:
            return
        if pool is not None:
            a, b = self._barrier_exchange(epoch, seg_no)
        else:
            a, b = self.peers[0].params, self.peers[1].params
        if cfg.mode == "pc-lw":
            lw = LWConfig(cfg.alpha, cfg.criterion, cfg.scope_roles)
            report = lw_cooperate(a, b, lw, self.entropy_cfg, epoch)
        else:
            report = pw_cooperate(a, b, PWConfig(cfg.gamma, cfg.scope_roles), epoch)
        if pool is not None:
            self.peers[0].params.assign(a)
            self.peers[1].params.assign(b)
        self.reports.append(report)
        if self.out:
            append_cooperation_log(self.out / "coop_log.csv", report)

    def train_epoch(self, epoch: int, pool=None) -> None:
        its = [iter(self.trainer.batches(p, epoch)) for p in self.peers]
        size = self.cfg.coop_batches
        seg_iters = [_segments(it, size) for it in its]
        for seg_no, segs in enumerate(zip_longest(*seg_iters, fillvalue=[])):
            if pool is not None and len(self.peers) > 1:
                self._run_segment_parallel(segs, pool)
            else:
                self._run_segment_serial(segs)
            self._cooperate(epoch, seg_no, pool if len(self.peers) > 1 else None)

    # -- evaluation / bookkeeping -------------------------------------------

    def _validate(self, epoch: int) -> bool:
        improved = False
        for peer in self.peers:
            res = evaluate(peer.model, self.ds, "valid", exclude_history=self.cfg.exclude_history)
            for r in res:
                self.history.append((epoch, peer.index, r.split, r.metric, r.n, r.value, peer.last_loss))
            v = lookup(res, *SELECT_METRIC)
            if v > peer.best_val:
                peer.best_val, peer.best_epoch = v, epoch
                peer.best_params = peer.params.copy()
                improved = True
        return improved

    def run(self) -> RunResult:
        cfg = self.cfg
        if self.out:
            self.out.mkdir(parents=True, exist_ok=True)
            cfg.dump(self.out / "config.yaml")
            log_path = self.out / "coop_log.csv"
            if log_path.exists():
                log_path.unlink()
        self._validate(0)
        stale = 0
        last = 0
        pool = ThreadPoolExecutor(max_workers=2) if cfg.parallel else None
        scratch = tempfile.TemporaryDirectory(prefix="peercollab-") if pool and not self.out else None
        self._scratch = Path(scratch.name) if scratch else None
        try:
            for epoch in range(1, cfg.epochs + 1):
                self.train_epoch(epoch, pool)
                last = epoch
                for peer in self.peers:
                    if not peer.params.all_finite():
                        raise NumericalError(f"peer {peer.index} has non-finite weights after epoch {epoch}")
                if self._validate(epoch):
                    stale = 0
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        log.info("early stop at epoch %d", epoch)
                        break
        finally:
            if pool is not None:
                pool.shutdown()
            if scratch is not None:
                scratch.cleanup()
        return self._finish(last)

    def _finish(self, last_epoch: int) -> RunResult:
        cfg = self.cfg
        final_params = [p.params.copy() for p in self.peers]
        for peer in self.peers:
            peer.params.assign(peer.best_params)
        tag = f"{cfg.model}:{cfg.mode}"
        peer_results = {}
        for peer in self.peers:
            peer_results[peer.index] = (
                evaluate(peer.model, self.ds, "valid", tag=f"{tag}:peer{peer.index}", exclude_history=cfg.exclude_history)
                + evaluate(peer.model, self.ds, "test", tag=f"{tag}:peer{peer.index}", exclude_history=cfg.exclude_history)
            )
        if cfg.mode == "ensemble-m2":
            selected = 0
            results = ensemble_evaluate(self.peers[0].model, self.peers[1].model, self.ds, tag=tag,
                                        exclude_history=cfg.exclude_history)
        else:
            selected = max(range(len(self.peers)), key=lambda i: (self.peers[i].best_val, -i))
            results = [EvalResult(r.metric, r.n, r.value, r.split, tag) for r in peer_results[selected]]
        result = RunResult(cfg, self.peers, selected, results, peer_results, self.history, self.reports, last_epoch)
        if self.out:
            write_run_outputs(result, final_params)
        return result


def ensemble_evaluate(model_a: Model, model_b: Model, ds, tag="ensemble", exclude_history=True,
                      splits=("valid", "test")) -> list[EvalResult]:
    """Average the two models' score vectors; neither model is modified."""
    def score(users, hists):
        return ensemble_scores(model_a.score_batch(users, hists), model_b.score_batch(users, hists))
    out = []
    for split in splits:
        out += evaluate(model_a, ds, split, tag=tag, exclude_history=exclude_history, score_fn=score)
    return out


HISTORY_HEADER = ["epoch", "peer", "split", "metric", "N", "value", "train_loss"]
INVALID_THRESHOLDS = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)


def write_run_outputs(result: RunResult, final_params: list[ParameterSet]) -> None:
    from . import plots

    cfg = result.config
    out = Path(cfg.out)
    run_id = cfg.name
    rows = list(result.results)
    for idx, res in sorted(result.peer_results.items()):
        rows += res
    write_metrics_csv(out / "metrics.csv", run_id, rows)
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_HEADER)
        for row in result.history:
            w.writerow([*row[:5], repr(row[5]), repr(row[6])])
    # the output path stays out of the checkpoint so identical runs give identical files
    run_cfg = {k: v for k, v in cfg.to_dict().items() if k != "out"}
    ckpt_cfg = {"run": run_cfg, **result.peers[0].model.config()}
    for peer, final in zip(result.peers, final_params):
        save_checkpoint(peer.params, out / "checkpoints" / f"peer{peer.index}",
                        {**ckpt_cfg, "peer": peer.index, "best_epoch": peer.best_epoch})
        save_checkpoint(final, out / "checkpoints" / f"peer{peer.index}_last", {**ckpt_cfg, "peer": peer.index})
    save_checkpoint(result.model.params, out / "checkpoints" / "selected",
                    {**ckpt_cfg, "peer": result.selected})
    ratios = invalid_ratio_rows(result.model.params, cfg.bins)
    with open(out / "invalid_ratio.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run_id", "threshold", "ratio"])
        for th, r in ratios:
            w.writerow([run_id, th, repr(r)])
    write_summary_json(out / "summary.json", run_id, result.results, {
        "selected_peer": result.selected,
        "best_epochs": {p.index: p.best_epoch for p in result.peers},
        "stopped_epoch": result.stopped_epoch,
        "config": cfg.to_dict(),
    })
    plots.plot_training_history(out / "history.csv", out / "figures" / "training_curve.png")


def invalid_ratio_rows(params: ParameterSet, bins: int = 100, thresholds=INVALID_THRESHOLDS):
    cfg = EntropyConfig(bins)
    try:
        return [(th, invalid_layer_ratio(params, th, cfg)) for th in thresholds]
    except ConfigurationError:  # BPR has no dense layers to measure
        return []


def load_dataset(cfg: RunConfig) -> data_mod.InteractionDataset:
    if cfg.data is None:
        rows = data_mod.synthetic_interactions(seed=0)
        return data_mod.build_dataset(rows)
    return data_mod.ingest(cfg.data)


def train_single(cfg: RunConfig, ds=None) -> RunResult:
    cfg = cfg if cfg.mode == "single" else cfg.replace(mode="single")
    return PeerRun(ds if ds is not None else load_dataset(cfg), cfg).run()


def train_peer_collaboration(cfg: RunConfig, ds=None) -> RunResult:
    return PeerRun(ds if ds is not None else load_dataset(cfg), cfg).run()


def run(cfg: RunConfig, ds=None) -> RunResult:
    """Dispatch on ``cfg.mode``."""
    return PeerRun(ds if ds is not None else load_dataset(cfg), cfg).run()
