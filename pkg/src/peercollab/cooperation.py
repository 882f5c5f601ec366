"""Merging two peer models, plus the noise and pruning baselines."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .criteria import Criterion, EntropyConfig, layer_scores, pw_mask
from .errors import ConfigurationError
from .params import ParameterSet, Role, check_same_structure, parse_roles


@dataclass
class LWConfig:
    alpha: float = 30.0
    criterion: Criterion = Criterion.ENTROPY
    scope: frozenset = field(default_factory=lambda: frozenset(Role))

    def __post_init__(self):
        self.criterion = Criterion(self.criterion)
        self.scope = parse_roles(self.scope)
        if not self.alpha > 0:
            raise ConfigurationError("alpha must be positive")


@dataclass
class PWConfig:
    gamma: float = 0.01
    scope: frozenset = field(default_factory=lambda: frozenset(Role))

    def __post_init__(self):
        self.scope = parse_roles(self.scope)
        if self.gamma < 0:
            raise ConfigurationError("gamma must be non-negative")


@dataclass
class LayerReport:
    layer: str
    criterion: str
    h_self: float
    h_peer: float
    mu_self: float
    replaced_count: int = 0


@dataclass
class CooperationReport:
    """Per-layer outcome of one cooperation event, seen from peer 0."""
    epoch: int
    entries: list[LayerReport] = field(default_factory=list)

    def rows(self):
        for e in self.entries:
            yield [self.epoch, e.layer, e.criterion, e.h_self, e.h_peer, e.mu_self, e.replaced_count]


COOP_LOG_HEADER = ["epoch", "layer", "criterion", "h_self", "h_peer", "mu_self", "replaced_count"]


def append_cooperation_log(path, report: CooperationReport) -> None:
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(COOP_LOG_HEADER)
        for row in report.rows():
            w.writerow(row)


def coefficient(h_self: float, h_peer: float, alpha: float) -> float:
    """Sigmoid of ``alpha * (h_self - h_peer)``, computed without overflow."""
    if not alpha > 0:
        raise ConfigurationError("alpha must be positive")
    x = alpha * (h_self - h_peer)
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def _blend(own: np.ndarray, other: np.ndarray, mu: float) -> np.ndarray:
    mixed = mu * own.astype(np.float64) + (1.0 - mu) * other.astype(np.float64)
    return mixed.astype(own.dtype)


def lw_cooperate(peer_a: ParameterSet, peer_b: ParameterSet, cfg: LWConfig,
                 entropy_cfg: EntropyConfig = EntropyConfig(), epoch: int = 0) -> CooperationReport:
    """Replace every in-scope layer of both peers by its coefficient-weighted blend.

    Scores and coefficients come from snapshots taken before anything is
    written, so the result does not depend on layer order. Bias and norm
    vectors reuse their layer's coefficient.
    """
    check_same_structure(peer_a, peer_b)
    report = CooperationReport(epoch)
    plan = []
    for la, lb in zip(peer_a.layers, peer_b.layers):
        if la.role not in cfg.scope:
            continue
        ha, hb = layer_scores(la.weight, lb.weight, cfg.criterion, entropy_cfg)
        mu_a = coefficient(ha, hb, cfg.alpha)
        mu_b = coefficient(hb, ha, cfg.alpha)
        plan.append((la, lb, mu_a, mu_b))
        report.entries.append(LayerReport(la.name, cfg.criterion.value, ha, hb, mu_a, 0))
    for la, lb, mu_a, mu_b in plan:
        for (tname, wa), (_, wb) in zip(la.tensors(), lb.tensors()):
            new_a = _blend(wa, wb, mu_a)
            new_b = _blend(wb, wa, mu_b)
            wa[...] = new_a
            wb[...] = new_b
    return report


def pw_cooperate(peer_a: ParameterSet, peer_b: ParameterSet, cfg: PWConfig, epoch: int = 0) -> CooperationReport:
    """Swap in the peer's value wherever a weight's magnitude is below gamma.

    Masks for both peers are computed from the pre-update weights. Bias and
    norm vectors follow the same rule.
    """
    check_same_structure(peer_a, peer_b)
    report = CooperationReport(epoch)
    for la, lb in zip(peer_a.layers, peer_b.layers):
        if la.role not in cfg.scope:
            continue
        replaced = 0
        for (tname, wa), (_, wb) in zip(la.tensors(), lb.tensors()):
            ma = pw_mask(wa, cfg.gamma).mask.astype(bool)
            mb = pw_mask(wb, cfg.gamma).mask.astype(bool)
            old_a = wa.copy()
            wa[ma] = wb[ma]
            wb[mb] = old_a[mb]
            if tname == "weight":
                replaced = int(ma.sum())
        report.entries.append(LayerReport(la.name, "magnitude", float("nan"), float("nan"), float("nan"), replaced))
    return report


def noise_reactivate(model: ParameterSet, gamma: float, noise_std: float, rng: np.random.Generator,
                     scope=None) -> int:
    """Overwrite weights with ``|w| < gamma`` by Gaussian draws; returns how many."""
    if gamma < 0 or not noise_std > 0:
        raise ConfigurationError("noise_reactivate needs gamma >= 0 and noise_std > 0")
    total = 0
    for layer in model.select(scope):
        w = layer.weight
        mask = pw_mask(w, gamma).mask.astype(bool)
        n = int(mask.sum())
        if n:
            w[mask] = rng.normal(0.0, noise_std, size=n).astype(w.dtype)
        total += n
    return total


def ensemble_scores(score_a: np.ndarray, score_b: np.ndarray) -> np.ndarray:
    if score_a.shape != score_b.shape:
        raise ConfigurationError(f"ensemble_scores length mismatch: {score_a.shape} vs {score_b.shape}")
    return (score_a + score_b) / 2.0


def prune_count(fraction: float, total: int) -> int:
    # guard against 0.3 * 10 = 3.0000000000000004-style float noise
    return int(math.floor(round(fraction * total, 9)))


def magnitude_prune(model: ParameterSet, fraction: float, scope=None, return_masks: bool = False):
    """Zero the globally smallest-|w| ``fraction`` of in-scope weight matrices.

    Ties are broken by position (layer order, then row-major). Returns the
    number zeroed, and optionally the keep-masks per layer name.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ConfigurationError("prune fraction must lie in [0, 1]")
    layers = model.select(scope)
    mags = np.concatenate([np.abs(l.weight.astype(np.float64)).reshape(-1) for l in layers]) if layers else np.zeros(0)
    k = prune_count(fraction, mags.size)
    order = np.argsort(mags, kind="stable")[:k]
    kill = np.zeros(mags.size, dtype=bool)
    kill[order] = True
    masks = {}
    start = 0
    for l in layers:
        n = l.weight.size
        local = kill[start:start + n].reshape(l.weight.shape)
        l.weight[local] = 0.0
        masks[l.name] = ~local
        start += n
    if return_masks:
        return k, masks
    return k
