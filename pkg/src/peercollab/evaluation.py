"""Leave-one-out top-N ranking metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import InteractionDataset, left_pad
from .errors import ConfigurationError, DataError

METRICS = ("MRR", "HIT", "NDCG")
DEFAULT_NS = (5, 20)


@dataclass(frozen=True)
class EvalResult:
    metric: str
    n: int
    value: float
    split: str
    model: str = ""


def rank_of_target(scores: np.ndarray, target: int, excluded=()) -> int:
    """1 + number of competing items scoring at least as high as the target.

    Ties count against the target. Index 0 (padding) and ``excluded`` ids
    never compete.
    """
    scores = np.asarray(scores)
    if not 1 <= target < len(scores):
        raise DataError(f"target id {target} outside 1..{len(scores) - 1}")
    excluded = set(int(e) for e in excluded)
    if target in excluded:
        raise DataError(f"target {target} is in the excluded set")
    t = scores[target]
    beats = scores >= t
    beats[0] = False
    beats[target] = False
    if excluded:
        beats[list(excluded)] = False
    return 1 + int(beats.sum())


def metrics_at_n(ranks, n: int) -> dict[str, float]:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ConfigurationError("no ranks to aggregate")
    if ranks.min() < 1:
        raise ConfigurationError("ranks must be >= 1")
    hit = ranks <= n
    return {
        "MRR": float(np.where(hit, 1.0 / ranks, 0.0).mean()),
        "HIT": float(hit.mean()),
        "NDCG": float(np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0).mean()),
    }


def user_ranks(model, ds: InteractionDataset, split: str = "valid", exclude_history: bool = True,
               batch: int = 256, score_fn=None) -> np.ndarray:
    """Rank of each user's held-out item under ``model`` (or ``score_fn(users, histories)``).

    The candidates are the whole catalogue minus, by default, the items the
    user has already interacted with in the visible history (the target
    itself always stays a candidate).
    """
    if split not in ("valid", "test"):
        raise ConfigurationError(f"split must be 'valid' or 'test', got {split!r}")
    score_fn = score_fn or model.score_batch
    t = model.hp.seq_len
    ranks = np.empty(ds.n_users, dtype=np.int64)
    for start in range(0, ds.n_users, batch):
        users = np.arange(start, min(start + batch, ds.n_users))
        hists = np.stack([left_pad(ds.history(u, split), t) for u in users])
        scores = score_fn(users, hists)
        for row, u in enumerate(users):
            target = ds.target(int(u), split)
            s = scores[row]
            tgt_score = s[target]
            beats = s >= tgt_score
            beats[0] = False
            if exclude_history:
                beats[ds.history(int(u), split)] = False
            beats[target] = False
            ranks[u] = 1 + int(beats.sum())
    return ranks


def results_from_ranks(ranks, split: str, ns=DEFAULT_NS, tag: str = "") -> list[EvalResult]:
    out = []
    for n in ns:
        for metric, value in metrics_at_n(ranks, n).items():
            out.append(EvalResult(metric, n, value, split, tag))
    check_monotone(out)
    return out


def evaluate(model, ds: InteractionDataset, split: str = "valid", ns=DEFAULT_NS, tag: str = "",
             exclude_history: bool = True, score_fn=None) -> list[EvalResult]:
    ranks = user_ranks(model, ds, split, exclude_history=exclude_history, score_fn=score_fn)
    return results_from_ranks(ranks, split, ns, tag)


def check_monotone(results: list[EvalResult]) -> None:
    """Larger cut-offs can only raise MRR and HIT."""
    by = {(r.split, r.metric, r.n): r.value for r in results}
    for (split, metric, n), v in by.items():
        for (s2, m2, n2), v2 in by.items():
            if s2 == split and m2 == metric and metric in ("MRR", "HIT") and n2 > n and v2 < v - 1e-12:
                raise AssertionError(f"{metric}@{n2}={v2} < {metric}@{n}={v} on {split}")


def lookup(results, metric: str, n: int, split: str | None = None) -> float:
    for r in results:
        if r.metric == metric and r.n == n and (split is None or r.split == split):
            return r.value
    raise KeyError((metric, n, split))


METRICS_HEADER = ["run_id", "model", "split", "metric", "N", "value"]


def write_metrics_csv(path, run_id: str, results: list[EvalResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for r in results:
            w.writerow([run_id, r.model, r.split, r.metric, r.n, repr(r.value)])


def read_metrics_csv(path) -> list[EvalResult]:
    with open(path, newline="") as fh:
        return [EvalResult(row["metric"], int(row["N"]), float(row["value"]), row["split"], row["model"])
                for row in csv.DictReader(fh)]


def write_summary_json(path, run_id: str, results: list[EvalResult], extra: dict | None = None) -> None:
    payload = {"run_id": run_id, "results": [asdict(r) for r in results]}
    payload.update(extra or {})
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default))


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, float) and math.isnan(o):
        return None
    return str(o)
