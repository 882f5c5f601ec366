"""Interaction logs: ingestion, k-core filtering, splits, sequences and sampling.

Input files are UTF-8 text, one interaction per line::

    user_id<TAB>item_id<TAB>timestamp

Extra columns (for example a rating) are ignored. Item ids are remapped to
``1..n_items``; 0 is the padding id. User ids are remapped to ``0..n_users-1``.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .numerics import rng_stream

log = logging.getLogger(__name__)

MIN_COUNT = 5


@dataclass
class InteractionDataset:
    n_users: int
    n_items: int
    sequences: list[np.ndarray]
    user_labels: list[str] = field(default_factory=list)
    item_labels: list[str] = field(default_factory=list)

    def train_items(self, u: int) -> np.ndarray:
        return self.sequences[u][:-2]

    def valid_item(self, u: int) -> int:
        return int(self.sequences[u][-2])

    def test_item(self, u: int) -> int:
        return int(self.sequences[u][-1])

    def history(self, u: int, split: str) -> np.ndarray:
        """Items visible to the model when predicting ``split``'s target."""
        seq = self.sequences[u]
        return seq[:-2] if split == "valid" else seq[:-1]

    def target(self, u: int, split: str) -> int:
        return self.valid_item(u) if split == "valid" else self.test_item(u)

    @property
    def n_train(self) -> int:
        return sum(max(len(s) - 2, 0) for s in self.sequences)

    def train_sets(self) -> list[set]:
        return [set(self.train_items(u).tolist()) for u in range(self.n_users)]

    def stats(self) -> dict:
        lengths = [len(s) for s in self.sequences]
        return {
            "users": self.n_users,
            "items": self.n_items,
            "actions": int(sum(lengths)),
            "min_seq_len": int(min(lengths)),
            "max_seq_len": int(max(lengths)),
        }


def read_interactions(path) -> list[tuple[str, str, int]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) < 3:
                raise DataError(f"{path}:{lineno}: expected user<TAB>item<TAB>timestamp, got {line!r}")
            try:
                ts = int(parts[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: timestamp {parts[2]!r} is not an integer") from None
            rows.append((parts[0], parts[1], ts))
    return rows


def kcore_filter(rows, k: int = MIN_COUNT):
    """Iteratively drop users with < k interactions and items with < k distinct users."""
    rows = list(rows)
    while True:
        user_n = defaultdict(int)
        item_users = defaultdict(set)
        for u, i, _ in rows:
            user_n[u] += 1
            item_users[i].add(u)
        kept = [r for r in rows if user_n[r[0]] >= k and len(item_users[r[1]]) >= k]
        if len(kept) == len(rows):
            return kept
        rows = kept


def build_dataset(rows, min_count: int = MIN_COUNT) -> InteractionDataset:
    rows = kcore_filter(rows, min_count)
    if not rows:
        raise DataError("no interactions left after 5-core filtering")
    user_map: dict[str, int] = {}
    item_map: dict[str, int] = {}
    per_user = defaultdict(list)
    for order, (u, i, ts) in enumerate(rows):
        if u not in user_map:
            user_map[u] = len(user_map)
        if i not in item_map:
            item_map[i] = len(item_map) + 1
        per_user[user_map[u]].append((ts, order, item_map[i]))
    sequences = []
    for uid in range(len(user_map)):
        events = sorted(per_user[uid], key=lambda e: (e[0], e[1]))
        sequences.append(np.array([e[2] for e in events], dtype=np.int64))
    return InteractionDataset(
        n_users=len(user_map),
        n_items=len(item_map),
        sequences=sequences,
        user_labels=list(user_map),
        item_labels=list(item_map),
    )


def ingest(path, min_count: int = MIN_COUNT) -> InteractionDataset:
    return build_dataset(read_interactions(path), min_count)


def write_interactions(ds: InteractionDataset, path) -> None:
    """Write the remapped dataset back out in the input format."""
    with open(path, "w", encoding="utf-8") as fh:
        for u, seq in enumerate(ds.sequences):
            for pos, item in enumerate(seq.tolist()):
                fh.write(f"{u}\t{item}\t{pos}\n")


def build_sequences(item_lists, t: int) -> np.ndarray:
    """Split each list into consecutive length-``t`` chunks from the start.

    Lists shorter than ``t`` are left-padded with 0; for longer lists only the
    final, incomplete chunk is padded.
    """
    if t < 2:
        raise DataError("sequence length t must be at least 2")
    out = []
    for items in item_lists:
        items = np.asarray(items, dtype=np.int64)
        for start in range(0, len(items), t):
            out.append(left_pad(items[start:start + t], t))
    if not out:
        return np.zeros((0, t), dtype=np.int64)
    return np.stack(out)


def left_pad(items, t: int) -> np.ndarray:
    items = np.asarray(items, dtype=np.int64)[-t:]
    return np.concatenate([np.zeros(t - len(items), dtype=np.int64), items])


def shuffled_epoch(n_examples: int, seed: int, epoch: int, stream: int = 0) -> np.ndarray:
    """Permutation of ``range(n_examples)`` determined by ``(seed, stream, epoch)``.

    ``stream`` separates peers; two peers given the same stream see the same order.
    """
    return rng_stream(seed, (7, stream, epoch)).permutation(n_examples)


def sample_bpr_triples(ds: InteractionDataset, batch: int, rng: np.random.Generator,
                       train_sets: list[set] | None = None, max_retries: int = 100) -> np.ndarray:
    """Draw ``(user, positive, negative)`` rows; negatives avoid the user's train items."""
    if train_sets is None:
        train_sets = ds.train_sets()
    # users who consumed the whole catalog have no negatives to draw
    eligible = np.array([u for u in range(ds.n_users) if 0 < len(train_sets[u]) < ds.n_items])
    if len(eligible) == 0:
        raise DataError("no user has training interactions with negatives available")
    out = np.empty((batch, 3), dtype=np.int64)
    filled = 0
    while filled < batch:
        u = int(eligible[rng.integers(len(eligible))])
        items = ds.train_items(u)
        pos = int(items[rng.integers(len(items))])
        seen = train_sets[u]
        for _ in range(max_retries):
            neg = int(rng.integers(1, ds.n_items + 1))
            if neg not in seen:
                break
        else:
            log.warning("user %d: no negative found in %d retries, skipping", u, max_retries)
            continue
        out[filled] = (u, pos, neg)
        filled += 1
    return out


def dnn_examples(ds: InteractionDataset, t: int):
    """(history, target) pairs from each user's train list: every prefix predicts the next item."""
    histories, targets = [], []
    for u in range(ds.n_users):
        items = ds.train_items(u)
        for j in range(1, len(items)):
            histories.append(left_pad(items[:j], t))
            targets.append(items[j])
    if not histories:
        return np.zeros((0, t), dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.stack(histories), np.array(targets, dtype=np.int64)


def sas_examples(ds: InteractionDataset, t: int):
    """(input, target) sequence pairs: target is the train chunk, input is it shifted right by one."""
    chunks = build_sequences([ds.train_items(u) for u in range(ds.n_users)], t + 1)
    return chunks[:, :-1].copy(), chunks[:, 1:].copy()


def sample_negatives(targets: np.ndarray, n_items: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform item per position, redrawn where it collides with the target; pads stay 0."""
    neg = rng.integers(1, n_items + 1, size=targets.shape)
    clash = (neg == targets) & (targets > 0)
    while clash.any():
        neg[clash] = rng.integers(1, n_items + 1, size=int(clash.sum()))
        clash = (neg == targets) & (targets > 0)
    neg[targets == 0] = 0
    return neg


def synthetic_interactions(n_users: int = 1000, n_items: int = 500, n_groups: int = 10,
                           min_len: int = 12, max_len: int = 40, follow_prob: float = 0.5,
                           seed: int = 0) -> list[tuple[str, str, int]]:
    """Interaction log with planted taste groups and item-to-item transitions.

    Each item belongs to one group; each user prefers a few groups; with
    probability ``follow_prob`` the next item is the previous item's fixed
    successor, otherwise a popularity-weighted draw from a preferred group.
    Users never repeat an item.
    """
    rng = rng_stream(seed, 1001)
    group_of = rng.integers(0, n_groups, size=n_items)
    members = [np.flatnonzero(group_of == g) for g in range(n_groups)]
    popularity = 1.0 / np.arange(1, n_items + 1) ** 0.5
    popularity = popularity[rng.permutation(n_items)]
    successor = np.empty(n_items, dtype=np.int64)
    for g in range(n_groups):
        m = members[g]
        successor[m] = m[rng.permutation(len(m))] if len(m) else m
    rows = []
    for u in range(n_users):
        taste = rng.dirichlet(np.full(n_groups, 0.3))
        length = int(rng.integers(min_len, max_len + 1))
        seen: set = set()
        prev = -1
        ts = int(rng.integers(0, 10_000))
        for _ in range(length):
            item = -1
            if prev >= 0 and rng.random() < follow_prob and int(successor[prev]) not in seen:
                item = int(successor[prev])
            else:
                for _ in range(50):
                    g = rng.choice(n_groups, p=taste)
                    m = members[g]
                    if len(m) == 0:
                        continue
                    p = popularity[m] / popularity[m].sum()
                    cand = int(m[rng.choice(len(m), p=p)])
                    if cand not in seen:
                        item = cand
                        break
            if item < 0:
                continue
            seen.add(item)
            rows.append((f"u{u}", f"i{item}", ts))
            ts += int(rng.integers(1, 100))
            prev = item
    return rows


def write_synthetic(path, **kwargs) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for u, i, ts in synthetic_interactions(**kwargs):
            fh.write(f"{u}\t{i}\t{ts}\n")
    return path
