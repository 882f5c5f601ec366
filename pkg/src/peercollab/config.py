"""Run configuration: defaults, YAML file loading and validation.

Config files are flat YAML mappings whose keys mirror the CLI flags
(``coop-every`` and ``coop_every`` are both accepted). Flags override file
values.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import yaml

from .criteria import Criterion
from .errors import ConfigurationError
from .models import DESK, HyperParams
from .params import parse_roles

MODES = ("single", "pc-lw", "pc-pw", "pc-noise", "ensemble-m2")
PC_MODES = ("pc-lw", "pc-pw")
VARIANTS = ("dd", "sd", "ds")


@dataclass
class RunConfig:
    model: str = "bpr"
    mode: str = "single"
    data: str | None = None
    criterion: str = "entropy"
    alpha: float = 30.0
    gamma: float = 0.01
    bins: int = 100
    scope: str = "all"
    eta1: float | None = None
    eta2: float | None = None
    seed: int = 0
    epochs: int = 20
    t: int | None = None
    coop_every: str = "epoch"
    out: str | None = None
    parallel: bool = False
    # knobs without a dedicated flag; settable from the config file
    dim: int | None = None
    batch_size: int | None = None
    l2: float | None = None
    dropout: float | None = None
    blocks: int = 2
    variant: str = "dd"
    patience: int = 10
    noise_std: float = 0.01
    exclude_history: bool = True
    run_id: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.model not in DESK:
            raise ConfigurationError(f"model must be one of {sorted(DESK)}, got {self.model!r}")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        Criterion(self.criterion)
        parse_roles(self.scope_roles)
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}")
        if not self.alpha > 0:
            raise ConfigurationError("alpha must be positive")
        if self.gamma < 0:
            raise ConfigurationError("gamma must be non-negative")
        if self.bins < 2:
            raise ConfigurationError("bins must be >= 2")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        self.coop_batches  # parses
        if self.mode in PC_MODES and self.variant != "sd" and self.resolved_eta2 == self.resolved_eta1:
            raise ConfigurationError("peer-collaboration modes need eta1 != eta2 unless variant is 'sd'")
        if self.data is not None and not Path(self.data).exists():
            raise ConfigurationError(f"data file {self.data} does not exist")

    @property
    def scope_roles(self):
        if isinstance(self.scope, str):
            return [s.strip() for s in self.scope.split(",")] if "," in self.scope else self.scope
        return self.scope

    @property
    def coop_batches(self) -> int | None:
        """None for once per epoch, else the batch interval."""
        if self.coop_every == "epoch":
            return None
        if isinstance(self.coop_every, str) and self.coop_every.startswith("batches:"):
            try:
                k = int(self.coop_every.split(":", 1)[1])
            except ValueError:
                k = 0
            if k > 0:
                return k
        raise ConfigurationError(f"coop-every must be 'epoch' or 'batches:K', got {self.coop_every!r}")

    @property
    def hyperparams(self) -> HyperParams:
        base = DESK[self.model]
        return HyperParams(
            batch_size=self.batch_size or base.batch_size,
            dim=self.dim or base.dim,
            learning_rate=self.resolved_eta1,
            l2=base.l2 if self.l2 is None else self.l2,
            dropout=base.dropout if self.dropout is None else self.dropout,
            seq_len=self.t or base.seq_len,
            blocks=self.blocks,
        )

    @property
    def resolved_eta1(self) -> float:
        return self.eta1 if self.eta1 is not None else DESK[self.model].learning_rate

    @property
    def resolved_eta2(self) -> float:
        if self.variant == "sd":
            return self.resolved_eta1
        # the second peer runs at a deliberately sub-optimal rate
        return self.eta2 if self.eta2 is not None else self.resolved_eta1 * 0.5

    @property
    def name(self) -> str:
        if self.run_id:
            return self.run_id
        return f"{self.model}-{self.mode}-s{self.seed}"

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["eta1"] = self.resolved_eta1
        d["eta2"] = self.resolved_eta2
        d["t"] = self.hyperparams.seq_len
        return d

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))


def _normalise_key(key: str) -> str:
    return key.strip().lstrip("-").replace("-", "_")


FIELD_NAMES = {f.name for f in dataclasses.fields(RunConfig)}


def load_config_file(path) -> dict:
    raw = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: config must be a flat key/value mapping")
    out = {}
    for k, v in raw.items():
        key = _normalise_key(str(k))
        if key not in FIELD_NAMES:
            raise ConfigurationError(f"{path}: unknown config key {k!r}")
        if isinstance(v, dict):
            raise ConfigurationError(f"{path}: nested value for {k!r}; config must be flat")
        out[key] = v
    return out


def make_config(file_path=None, **overrides) -> RunConfig:
    values = load_config_file(file_path) if file_path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)
