"""Dense arithmetic helpers, seeded random streams, Adam and a gradient checker.

Matrices are plain ``numpy.ndarray`` objects. Training runs in float32; the
gradient checker evaluates losses in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericalError

TRAIN_DTYPE = np.float32
CHECK_DTYPE = np.float64


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ConfigurationError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ConfigurationError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericalError("matmul produced non-finite values")
    return out


def rng_stream(seed: int, stream_id: int | tuple[int, ...] = 0) -> np.random.Generator:
    """Return an independent generator for ``(seed, stream_id)``.

    The generator is PCG64 keyed through ``SeedSequence(seed, spawn_key=...)``,
    so equal keys reproduce the same draws on every platform and distinct
    stream ids give independent streams.
    """
    if isinstance(stream_id, int):
        stream_id = (stream_id,)
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(s) for s in stream_id))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class AdamState:
    shape: tuple[int, ...]
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    dtype: type = TRAIN_DTYPE
    step_count: int = 0
    first_moment: np.ndarray = field(default=None, repr=False)
    second_moment: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.first_moment is None:
            self.first_moment = np.zeros(self.shape, dtype=self.dtype)
        if self.second_moment is None:
            self.second_moment = np.zeros(self.shape, dtype=self.dtype)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray, name: str = "?") -> np.ndarray:
    """Apply one bias-corrected Adam update to ``params`` in place."""
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ConfigurationError(
            f"adam shape mismatch for {name}: params {params.shape}, grads {grads.shape}, "
            f"state {state.first_moment.shape}"
        )
    if not np.all(np.isfinite(grads)):
        raise NumericalError(f"non-finite gradient in layer {name}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    m, v = state.first_moment, state.second_moment
    m *= b1
    m += (1.0 - b1) * grads
    v *= b2
    v += (1.0 - b2) * np.square(grads)
    lr_t = state.learning_rate * math.sqrt(1.0 - b2**t) / (1.0 - b1**t)
    # eps is bias-corrected too, so the update equals lr * m_hat / (sqrt(v_hat) + eps)
    eps_t = state.epsilon * math.sqrt(1.0 - b2**t)
    params -= (lr_t * m / (np.sqrt(v) + eps_t)).astype(params.dtype, copy=False)
    return params


class Adam:
    """Adam over a dict of named parameter arrays (one AdamState per array)."""

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.states: dict[str, AdamState] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            p = params[name]
            st = self.states.get(name)
            if st is None:
                st = AdamState(p.shape, self.learning_rate, self.beta1, self.beta2, self.epsilon, dtype=p.dtype)
                self.states[name] = st
            adam_step(st, p, g.astype(p.dtype, copy=False), name)


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(loss_fn, params: dict[str, np.ndarray], analytic: dict[str, np.ndarray],
               probe_count: int = 30, h: float = 1e-5, seed: int = 0, floor: float = 1e-8) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_fn(params)`` must be deterministic; it is evaluated on float64
    copies of ``params`` with one coordinate nudged by ``±h``. Probe
    coordinates are drawn uniformly over all entries of all arrays.
    """
    if h <= 0:
        raise ConfigurationError("grad_check step h must be positive")
    work = {k: np.array(v, dtype=CHECK_DTYPE) for k, v in params.items()}
    base = loss_fn(work)
    if loss_fn(work) != base:
        raise NumericalError("loss is not deterministic under a fixed seed")
    names = [k for k in analytic if work[k].size > 0]
    sizes = np.array([work[k].size for k in names])
    rng = rng_stream(seed, 99)
    flat_idx = rng.integers(0, sizes.sum(), size=probe_count)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for fi in flat_idx:
        j = int(np.searchsorted(offsets, fi, side="right") - 1)
        name = names[j]
        local = int(fi - offsets[j])
        arr = work[name].reshape(-1)
        old = arr[local]
        arr[local] = old + h
        up = loss_fn(work)
        arr[local] = old - h
        down = loss_fn(work)
        arr[local] = old
        numeric = (up - down) / (2.0 * h)
        exact = float(np.asarray(analytic[name]).reshape(-1)[local])
        worst = max(worst, relative_error(exact, numeric, floor))
    return worst
