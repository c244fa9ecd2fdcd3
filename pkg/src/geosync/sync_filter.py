"""Epoch-scoped updates and aggregator-side white-data filtering.

White data is anything that cannot change a receiver's committed state:
an exact repeat of content already forwarded this epoch, a transaction
whose reads are stale against the committed versions (it will abort
anyway), or an update that writes nothing.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping


class Verdict(str, Enum):
    LIVE = "live"
    REDUNDANT = "redundant"
    CONFLICTING = "conflicting"
    NULL = "null"


def content_hash(write_set: Mapping[str, tuple[int, int]]) -> int:
    """64-bit digest of the sorted (key, version, payload_bytes) triples."""
    h = hashlib.blake2b(digest_size=8)
    for key in sorted(write_set):
        version, nbytes = write_set[key]
        h.update(f"{key}\x1f{int(version)}\x1f{int(nbytes)}\x1e".encode())
    return int.from_bytes(h.digest(), "big")


@dataclass(frozen=True)
class Update:
    txn_id: int
    origin: int
    epoch: int
    write_set: Mapping[str, tuple[int, int]] = field(default_factory=dict)
    read_set: Mapping[str, int] = field(default_factory=dict)
    content_hash: int = field(init=False)

    def __post_init__(self):
        ws = {str(k): (int(v), int(b)) for k, (v, b) in self.write_set.items()}
        if any(b < 0 for _, b in ws.values()):
            raise ValueError("payload_bytes must be non-negative")
        object.__setattr__(self, "write_set", ws)
        object.__setattr__(self, "read_set", {str(k): int(v) for k, v in self.read_set.items()})
        object.__setattr__(self, "content_hash", content_hash(ws))

    def __hash__(self):
        return hash((self.txn_id, self.origin, self.epoch, self.content_hash))

    @property
    def size_bytes(self) -> int:
        return sum(b for _, b in self.write_set.values())

    @property
    def is_null(self) -> bool:
        return not self.write_set or self.size_bytes == 0

    def to_json(self) -> dict:
        return {
            "txn_id": self.txn_id,
            "origin": self.origin,
            "epoch": self.epoch,
            "write_set": {k: list(v) for k, v in sorted(self.write_set.items())},
            "read_set": dict(sorted(self.read_set.items())),
            "content_hash": f"{self.content_hash:016x}",
            "is_null": self.is_null,
        }

    @classmethod
    def from_json(cls, obj: dict) -> Update:
        u = cls(obj["txn_id"], obj["origin"], obj["epoch"],
                {k: tuple(v) for k, v in obj.get("write_set", {}).items()},
                obj.get("read_set", {}))
        if "content_hash" in obj and int(obj["content_hash"], 16) != u.content_hash:
            raise ValueError(f"txn {u.txn_id}: content_hash does not match write_set")
        return u


def dump_updates(updates: Iterable[Update]) -> str:
    return "".join(json.dumps(u.to_json(), sort_keys=True) + "\n" for u in updates)


def load_updates(text: str) -> list[Update]:
    return [Update.from_json(json.loads(line)) for line in text.splitlines() if line.strip()]


@dataclass
class AggregatorState:
    epoch: int
    committed_versions: dict[str, int] = field(default_factory=dict)
    seen_hashes: set[int] = field(default_factory=set)

    def advance(self, committed_versions: Mapping[str, int]) -> None:
        """Start the next epoch against a fresh committed-version snapshot."""
        for key, v in committed_versions.items():
            if v < self.committed_versions.get(key, v):
                raise ValueError(f"committed version of {key!r} went backwards")
        self.committed_versions = dict(committed_versions)
        self.seen_hashes.clear()
        self.epoch += 1


@dataclass
class FilterStats:
    kept: int = 0
    redundant: int = 0
    conflicting: int = 0
    null: int = 0
    bytes_in: int = 0
    bytes_out: int = 0

    @property
    def total(self) -> int:
        return self.kept + self.redundant + self.conflicting + self.null

    def add(self, other: FilterStats) -> FilterStats:
        return FilterStats(*(a + b for a, b in zip(self.as_tuple(), other.as_tuple())))

    def as_tuple(self) -> tuple[int, ...]:
        return (self.kept, self.redundant, self.conflicting, self.null, self.bytes_in, self.bytes_out)

    def to_json(self) -> dict:
        return dict(zip(("kept", "redundant", "conflicting", "null", "bytes_in", "bytes_out"), self.as_tuple()))


def is_stale(u: Update, committed_versions: Mapping[str, int]) -> bool:
    """OCC validation: some read observed a version older than the committed one."""
    return any(observed < committed_versions.get(key, observed) for key, observed in u.read_set.items())


def classify(u: Update, state: AggregatorState) -> Verdict:
    if u.epoch != state.epoch:
        raise ValueError(f"update from epoch {u.epoch} offered to aggregator in epoch {state.epoch}")
    if u.is_null:
        return Verdict.NULL
    if u.content_hash in state.seen_hashes:
        return Verdict.REDUNDANT
    if is_stale(u, state.committed_versions):
        return Verdict.CONFLICTING
    return Verdict.LIVE


def aggregate_and_filter(updates: Iterable[Update], state: AggregatorState) -> tuple[list[Update], FilterStats]:
    """Classify in arrival order; only live updates are kept and remembered.

    ``state.seen_hashes`` is extended in place; committed versions are left
    alone until the epoch closes.
    """
    kept: list[Update] = []
    stats = FilterStats()
    for u in updates:
        verdict = classify(u, state)
        stats.bytes_in += u.size_bytes
        if verdict is Verdict.LIVE:
            state.seen_hashes.add(u.content_hash)
            kept.append(u)
            stats.kept += 1
            stats.bytes_out += u.size_bytes
        elif verdict is Verdict.REDUNDANT:
            stats.redundant += 1
        elif verdict is Verdict.CONFLICTING:
            stats.conflicting += 1
        else:
            stats.null += 1
    return kept, stats
