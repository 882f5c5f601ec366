"""Importance measures for weights and whole layers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigurationError
from .params import ParameterSet, Role, parse_roles


class Criterion(str, Enum):
    ENTROPY = "entropy"
    L1_RELATIVE = "l1"


@dataclass(frozen=True)
class EntropyConfig:
    bins: int = 100

    def __post_init__(self):
        if self.bins < 2:
            raise ConfigurationError(f"entropy needs at least 2 bins, got {self.bins}")


@dataclass(frozen=True)
class ImportanceScore:
    layer_name: str
    criterion: Criterion
    value: float


@dataclass
class PWMask:
    layer_name: str
    mask: np.ndarray
    threshold: float


def layer_l1(w: np.ndarray) -> float:
    return float(np.abs(w).sum(dtype=np.float64))


def relative_l1(w_self: np.ndarray, w_peer: np.ndarray) -> float:
    """Share of the pair's total L1 mass held by ``w_self`` (0.5 if both are zero)."""
    if w_self.shape != w_peer.shape:
        raise ConfigurationError(f"relative_l1 shape mismatch: {w_self.shape} vs {w_peer.shape}")
    a, b = layer_l1(w_self), layer_l1(w_peer)
    if a + b == 0.0:
        return 0.5
    return a / (a + b)


def bin_counts(w: np.ndarray, bins: int) -> np.ndarray:
    """Equal-width histogram over [min, max]; the max value lands in the last bin."""
    v = np.asarray(w, dtype=np.float64).reshape(-1)
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        counts = np.zeros(bins, dtype=np.int64)
        counts[0] = v.size
        return counts
    width = (hi - lo) / bins
    idx = np.floor((v - lo) / width).astype(np.int64)
    np.clip(idx, 0, bins - 1, out=idx)
    return np.bincount(idx, minlength=bins)


def entropy(w: np.ndarray, cfg: EntropyConfig = EntropyConfig()) -> float:
    """Shannon entropy (nats) of the weight-value histogram with ``cfg.bins`` bins."""
    v = np.asarray(w)
    if v.size == 0:
        return 0.0
    counts = bin_counts(v, cfg.bins)
    n = v.size
    # fsum makes the result independent of summation order
    return -math.fsum((c / n) * math.log(c / n) for c in counts.tolist() if c > 0) + 0.0


def pw_mask(w: np.ndarray, gamma: float, layer_name: str = "") -> PWMask:
    if gamma < 0:
        raise ConfigurationError("gamma must be non-negative")
    # compare in 64-bit: a python float gamma would otherwise be rounded to w's dtype
    mask = (np.abs(np.asarray(w, dtype=np.float64)) < gamma).astype(np.uint8)
    return PWMask(layer_name, mask, float(gamma))


def layer_scores(self_w: np.ndarray, peer_w: np.ndarray, criterion: Criterion,
                 entropy_cfg: EntropyConfig) -> tuple[float, float]:
    criterion = Criterion(criterion)
    if criterion is Criterion.ENTROPY:
        return entropy(self_w, entropy_cfg), entropy(peer_w, entropy_cfg)
    return relative_l1(self_w, peer_w), relative_l1(peer_w, self_w)


DEFAULT_MEASURED = (Role.MIDDLE, Role.SOFTMAX)


def invalid_layer_ratio(model: ParameterSet, threshold: float, cfg: EntropyConfig = EntropyConfig(),
                        roles=DEFAULT_MEASURED) -> float:
    """Fraction of measured layers whose weight entropy is below ``threshold``.

    By default embeddings are not measured, only dense/attention layers.
    """
    layers = model.select(parse_roles(roles))
    if not layers:
        raise ConfigurationError("invalid_layer_ratio: no layers to measure")
    below = sum(1 for l in layers if entropy(l.weight, cfg) < threshold)
    return below / len(layers)
