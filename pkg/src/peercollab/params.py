"""Named layer groups and the checkpoint format.

A checkpoint is two files: ``<stem>.manifest`` (text) and ``<stem>.bin``
(little-endian float32 values in manifest order). Manifest layout::

    # peercollab checkpoint v1
    config <json object>
    <layer>\t<tensor>\t<role>\t<shape as AxB>\t<byte offset>\t<element count>
    ...
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError


class Role(str, Enum):
    EMBEDDING = "embedding"
    MIDDLE = "middle"
    SOFTMAX = "softmax"


def parse_roles(scope) -> frozenset[Role]:
    """Accept 'all', a role name, or an iterable of role names/Roles."""
    if scope is None or scope == "all":
        return frozenset(Role)
    if isinstance(scope, (str, Role)):
        scope = [scope]
    try:
        roles = frozenset(Role(s) for s in scope)
    except ValueError:
        raise ConfigurationError(f"unknown layer role in scope {scope!r}; use embedding, middle or softmax") from None
    if not roles:
        raise ConfigurationError("scope must name at least one layer role")
    return roles


@dataclass
class LayerGroup:
    """One layer: its main weight matrix plus bias/normalization vectors.

    Criteria are computed on ``weight`` only; ``aux`` arrays ride along with
    whatever coefficient the weight receives.
    """
    name: str
    role: Role
    weight: np.ndarray
    aux: dict[str, np.ndarray] = field(default_factory=dict)

    def tensors(self):
        yield "weight", self.weight
        yield from self.aux.items()

    @property
    def size(self) -> int:
        return self.weight.size


class ParameterSet:
    def __init__(self, layers: list[LayerGroup] | None = None):
        self.layers: list[LayerGroup] = []
        self._index: dict[str, LayerGroup] = {}
        for layer in layers or []:
            self.add(layer)

    def add(self, layer: LayerGroup) -> LayerGroup:
        if layer.name in self._index:
            raise ConfigurationError(f"duplicate layer name {layer.name!r}")
        self.layers.append(layer)
        self._index[layer.name] = layer
        return layer

    def __getitem__(self, name: str) -> LayerGroup:
        return self._index[name]

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    def names(self) -> list[str]:
        return [l.name for l in self.layers]

    def flat(self) -> dict[str, np.ndarray]:
        """``{"layer.tensor": array}`` views in layer order."""
        out = {}
        for layer in self.layers:
            for tname, arr in layer.tensors():
                out[f"{layer.name}.{tname}"] = arr
        return out

    def copy(self) -> "ParameterSet":
        return ParameterSet([
            LayerGroup(l.name, l.role, l.weight.copy(), {k: v.copy() for k, v in l.aux.items()})
            for l in self.layers
        ])

    def assign(self, other: "ParameterSet") -> None:
        """Copy values from a structurally identical set, in place."""
        check_same_structure(self, other)
        mine = self.flat()
        for k, v in other.flat().items():
            mine[k][...] = v

    def select(self, roles) -> list[LayerGroup]:
        roles = parse_roles(roles)
        return [l for l in self.layers if l.role in roles]

    def count(self) -> int:
        return sum(a.size for a in self.flat().values())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k, v in self.flat().items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v).tobytes())
        return h.hexdigest()

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.flat().values())


def check_same_structure(a: ParameterSet, b: ParameterSet) -> None:
    if a.names() != b.names():
        raise ConfigurationError(f"peer layer names differ: {a.names()} vs {b.names()}")
    for la, lb in zip(a.layers, b.layers):
        if la.role != lb.role:
            raise ConfigurationError(f"layer {la.name}: role {la.role} vs {lb.role}")
        if la.weight.shape != lb.weight.shape:
            raise ConfigurationError(f"layer {la.name}: shape {la.weight.shape} vs {lb.weight.shape}")
        if sorted(la.aux) != sorted(lb.aux):
            raise ConfigurationError(f"layer {la.name}: aux tensors differ")
        for k in la.aux:
            if la.aux[k].shape != lb.aux[k].shape:
                raise ConfigurationError(f"layer {la.name}.{k}: shape mismatch")


def save_checkpoint(params: ParameterSet, stem, config: dict | None = None) -> Path:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# peercollab checkpoint v1", "config " + json.dumps(config or {}, sort_keys=True)]
    offset = 0
    with open(stem.with_suffix(".bin"), "wb") as blob:
        for layer in params:
            for tname, arr in layer.tensors():
                data = np.ascontiguousarray(arr, dtype="<f4")
                shape = "x".join(str(s) for s in arr.shape)
                lines.append(f"{layer.name}\t{tname}\t{layer.role.value}\t{shape}\t{offset}\t{data.size}")
                blob.write(data.tobytes())
                offset += data.nbytes
    stem.with_suffix(".manifest").write_text("\n".join(lines) + "\n")
    return stem


def load_checkpoint(stem) -> tuple[ParameterSet, dict]:
    stem = Path(stem)
    if stem.suffix in (".manifest", ".bin"):
        stem = stem.with_suffix("")
    manifest = stem.with_suffix(".manifest").read_text().splitlines()
    raw = stem.with_suffix(".bin").read_bytes()
    if not manifest or not manifest[0].startswith("# peercollab checkpoint"):
        raise DataError(f"{stem}: not a checkpoint manifest")
    config: dict = {}
    params = ParameterSet()
    for lineno, line in enumerate(manifest[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("config "):
            config = json.loads(line[len("config "):])
            continue
        try:
            lname, tname, role, shape, off, count = line.split("\t")
            shape_t = tuple(int(s) for s in shape.split("x")) if shape else ()
            off, count = int(off), int(count)
        except ValueError as exc:
            raise DataError(f"{stem}.manifest line {lineno}: {exc}") from None
        if off + 4 * count > len(raw):
            raise DataError(f"{stem}.bin is truncated: {lname}.{tname} needs bytes up to {off + 4 * count}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).astype(np.float32).reshape(shape_t)
        if tname == "weight":
            params.add(LayerGroup(lname, Role(role), arr))
        else:
            params[lname].aux[tname] = arr
    return params, config
