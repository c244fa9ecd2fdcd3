"""Synthetic per-epoch update streams with planted white data.

Every write gets a fresh, globally increasing version, so distinct
transactions never share content. Honest reads observe the versions that
would be committed if every earlier epoch had been applied on time; since
no replica can be ahead of that, honest transactions always validate.
Planted conflicts read a version older than anything committed and fail
validation everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from geosync._rng import rng_for
from geosync.crdt import Entry
from geosync.sync_filter import Update, is_stale

INITIAL_VERSION = 1
STALE_VERSION = 0


@dataclass(frozen=True)
class WorkloadConfig:
    updates_per_node: int = 5
    keys_per_update: int = 2
    keyspace: int = 1000
    payload_bytes: int = 1024
    payload_spread: float = 0.0  # uniform +/- fraction around payload_bytes
    conflict_ratio: float = 0.0
    dup_ratio: float = 0.0
    null_ratio: float = 0.0
    zipf_theta: float = 0.0

    def __post_init__(self):
        for name in ("conflict_ratio", "dup_ratio", "null_ratio", "payload_spread"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.conflict_ratio + self.dup_ratio + self.null_ratio > 1.0:
            raise ValueError("white-data ratios sum to more than 1")
        if self.updates_per_node < 0 or self.keys_per_update < 1 or self.keyspace < self.keys_per_update:
            raise ValueError("invalid workload sizes")
        if self.zipf_theta < 0:
            raise ValueError("zipf_theta must be non-negative")

    def to_json(self) -> dict:
        return asdict(self)


def key_name(i: int) -> str:
    return f"k{i:06d}"


def initial_state(keyspace: int) -> dict[str, Entry]:
    """The loaded database every replica starts from."""
    return {key_name(i): Entry(INITIAL_VERSION, -1, 0, 0) for i in range(keyspace)}


@dataclass
class Planted:
    conflicting: int = 0
    redundant: int = 0
    null: int = 0
    white_bytes: int = 0
    total_bytes: int = 0


class WorkloadGenerator:
    """Deterministic update batches, one call per epoch."""

    def __init__(self, n: int, config: WorkloadConfig | None = None, seed: int = 0):
        self.n = n
        self.config = config or WorkloadConfig()
        self.seed = seed
        self.truth = {key_name(i): INITIAL_VERSION for i in range(self.config.keyspace)}
        self._version = INITIAL_VERSION
        self._txn = 0
        ranks = np.arange(1, self.config.keyspace + 1, dtype=float)
        weights = ranks ** -self.config.zipf_theta
        self._key_p = weights / weights.sum()

    def _next_version(self) -> int:
        self._version += 1
        return self._version

    def _next_txn(self) -> int:
        self._txn += 1
        return self._txn

    def epoch(self, e: int, active: set[int] | None = None) -> tuple[list[Update], Planted]:
        """Updates for epoch ``e`` in arrival order (origin, then sequence).

        Nodes outside ``active`` produce nothing. Category counts are exact:
        ``round(ratio * slots)`` slots per epoch, placed at random.
        """
        cfg = self.config
        rng = rng_for(self.seed, 2, e)
        nodes = [i for i in range(self.n) if active is None or i in active]
        slots = [(o, s) for o in nodes for s in range(cfg.updates_per_node)]
        total = len(slots)
        counts = {
            "conflict": int(round(cfg.conflict_ratio * total)),
            "null": int(round(cfg.null_ratio * total)),
            "dup": int(round(cfg.dup_ratio * total)),
        }
        order = rng.permutation(total)
        kind = ["live"] * total
        pos = 0
        for name in ("conflict", "null", "dup"):
            for idx in order[pos:pos + counts[name]]:
                kind[idx] = name
            pos += counts[name]

        planted = Planted()
        by_origin: dict[int, list[Update]] = {o: [] for o in nodes}
        originals: dict[int, list[Update]] = {o: [] for o in nodes}
        dup_slots: dict[int, int] = {o: 0 for o in nodes}
        for (o, _), k in zip(slots, kind):
            if k == "dup":
                dup_slots[o] += 1
                continue
            if k == "null":
                keys = rng.choice(cfg.keyspace, size=cfg.keys_per_update, replace=False, p=self._key_p)
                u = Update(self._next_txn(), o, e, {}, {key_name(int(x)): self.truth[key_name(int(x))] for x in keys})
                planted.null += 1
            else:
                keys = [key_name(int(x)) for x in
                        rng.choice(cfg.keyspace, size=cfg.keys_per_update, replace=False, p=self._key_p)]
                writes = {}
                for key in keys:
                    size = cfg.payload_bytes
                    if cfg.payload_spread:
                        size = int(round(size * (1 + rng.uniform(-cfg.payload_spread, cfg.payload_spread))))
                    writes[key] = (self._next_version(), max(size, 1))
                stale = k == "conflict"
                reads = {key: (STALE_VERSION if stale and i == 0 else self.truth[key]) for i, key in enumerate(keys)}
                u = Update(self._next_txn(), o, e, writes, reads)
                if stale:
                    planted.conflicting += 1
                    planted.white_bytes += u.size_bytes
                else:
                    originals[o].append(u)
            by_origin[o].append(u)
            planted.total_bytes += u.size_bytes

        # duplicates trail their originals so they arrive second
        for o in nodes:
            for _ in range(dup_slots[o]):
                if originals[o]:
                    src = originals[o][int(rng.integers(len(originals[o])))]
                    u = Update(self._next_txn(), o, e, src.write_set, src.read_set)
                    planted.redundant += 1
                    planted.white_bytes += u.size_bytes
                else:
                    u = Update(self._next_txn(), o, e, {}, {})
                    planted.null += 1
                by_origin[o].append(u)
                planted.total_bytes += u.size_bytes

        batch = [u for o in nodes for u in by_origin[o]]
        start = dict(self.truth)
        for u in batch:
            if not u.is_null and not is_stale(u, start):
                for key, (version, _) in u.write_set.items():
                    if version > self.truth[key]:
                        self.truth[key] = version
        return batch, planted
