"""Epoch-scoped delta-state merge with last-writer-wins registers.

Each key holds ``(version, origin, txn_id, payload_bytes)``. The winner is
the higher version, then the lower origin, then the lower txn id; a total
order, so merging is a join and the result depends only on the set of
updates applied.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from geosync.sync_filter import Update, is_stale


@dataclass(frozen=True, order=False)
class Entry:
    version: int
    origin: int
    txn_id: int
    payload_bytes: int

    def beats(self, other: Entry) -> bool:
        return (self.version, -self.origin, -self.txn_id) > (other.version, -other.origin, -other.txn_id)


@dataclass
class ReplicaState:
    committed: dict[str, Entry] = field(default_factory=dict)
    applied_txns: set[int] = field(default_factory=set)
    epoch: int = 0

    def copy(self) -> ReplicaState:
        return ReplicaState(dict(self.committed), set(self.applied_txns), self.epoch)

    def versions(self) -> dict[str, int]:
        return {k: e.version for k, e in self.committed.items()}

    def merge(self, u: Update) -> bool:
        """Apply ``u`` in place. Returns False when it was already applied this epoch."""
        if u.epoch > self.epoch:
            raise ValueError(f"update from future epoch {u.epoch} (replica at {self.epoch})")
        if u.txn_id in self.applied_txns:
            return False
        for key, (version, nbytes) in u.write_set.items():
            cand = Entry(version, u.origin, u.txn_id, nbytes)
            cur = self.committed.get(key)
            if cur is None or cand.beats(cur):
                self.committed[key] = cand
        self.applied_txns.add(u.txn_id)
        return True

    def digest(self) -> str:
        return snapshot_digest(self.committed)

    def frozen(self) -> tuple:
        """Hashable image of the full state, for memoized enumeration."""
        return (tuple(sorted(self.committed.items())), frozenset(self.applied_txns), self.epoch)


def merge(s: ReplicaState, u: Update) -> ReplicaState:
    """Functional form of :meth:`ReplicaState.merge`."""
    out = s.copy()
    out.merge(u)
    return out


def snapshot_digest(committed: Mapping[str, Entry]) -> str:
    """64-bit hex digest of the sorted committed map (version, origin, bytes per key)."""
    h = hashlib.blake2b(digest_size=8)
    for key in sorted(committed):
        e = committed[key]
        h.update(f"{key}\x1f{e.version}\x1f{e.origin}\x1f{e.payload_bytes}\x1e".encode())
    return h.hexdigest()


@dataclass
class EpochOutcome:
    epoch: int
    snapshot: dict[str, Entry]
    carried_over: list[Update]
    aborted: list[int] = field(default_factory=list)

    @property
    def digest(self) -> str:
        return snapshot_digest(self.snapshot)


class EpochReplica:
    """A replica that validates and merges one epoch at a time.

    Reads are validated against the committed versions at the start of the
    update's own epoch, so an update that arrives an epoch late gets the
    same verdict it would have had on time.
    """

    def __init__(self, node: int, initial: Mapping[str, Entry] | None = None):
        self.node = node
        self.state = ReplicaState(dict(initial or {}))
        self._bases: dict[int, dict[str, int]] = {0: self.state.versions()}

    @property
    def epoch(self) -> int:
        return self.state.epoch

    def base_versions(self, epoch: int | None = None) -> dict[str, int]:
        return self._bases[self.epoch if epoch is None else epoch]

    def close(self, arrived: Iterable[Update], late: Iterable[Update] = ()) -> EpochOutcome:
        e = self.epoch
        aborted = []
        for u in arrived:
            if u.epoch > e:
                raise ValueError(f"update {u.txn_id} from epoch {u.epoch} arrived in epoch {e}")
            base = self._bases.get(u.epoch)
            if base is None:
                raise ValueError(f"update {u.txn_id} is older than the retained validation window")
            if u.txn_id in self.state.applied_txns:
                continue
            if is_stale(u, base):
                aborted.append(u.txn_id)
                continue
            self.state.merge(u)
        snapshot = dict(self.state.committed)
        self.state.applied_txns.clear()
        self.state.epoch = e + 1
        self._bases[e + 1] = self.state.versions()
        self._bases.pop(e - 1, None)
        return EpochOutcome(e, snapshot, list(late), sorted(set(aborted)))


def epoch_close(s: ReplicaState, arrived: Iterable[Update], late: Iterable[Update] = ()) -> EpochOutcome:
    """Merge ``arrived`` into ``s`` (in place), snapshot, and advance the epoch.

    Updates whose reads are stale against ``s`` at the time of the call
    are aborted rather than merged.
    """
    base = s.versions()
    aborted = []
    for u in arrived:
        if u.epoch > s.epoch:
            raise ValueError(f"update {u.txn_id} from epoch {u.epoch} arrived in epoch {s.epoch}")
        if is_stale(u, base):
            aborted.append(u.txn_id)
            continue
        s.merge(u)
    out = EpochOutcome(s.epoch, dict(s.committed), list(late), sorted(set(aborted)))
    s.applied_txns.clear()
    s.epoch += 1
    return out


def visibility_delay_bound(tau_ms: float, delta_wan_ms: float) -> float:
    """Worst-case extra visibility delay for an update that misses its epoch."""
    if tau_ms < 0 or delta_wan_ms < 0:
        raise ValueError("timeout and WAN delay must be non-negative")
    return tau_ms + delta_wan_ms


@dataclass
class PartitionBuffer:
    """Updates held back because their origin is on the far side of a partition."""

    unreachable: frozenset[int]
    held: list[Update] = field(default_factory=list)
    deliverable: list[Update] = field(default_factory=list)

    @property
    def stalled(self) -> bool:
        return bool(self.held)

    def heal(self) -> list[Update]:
        out = self.deliverable + self.held
        self.held, self.deliverable = [], []
        self.unreachable = frozenset()
        return out


def partition_buffer(s: ReplicaState, unreachable: Iterable[int], pending: Iterable[Update]) -> PartitionBuffer:
    """Split ``pending`` by reachability of the origin.

    While anything is held the epoch may not snapshot; ``s`` itself is not
    touched, so nothing from the far side is committed before the heal.
    """
    cut = frozenset(unreachable)
    buf = PartitionBuffer(cut)
    for u in pending:
        (buf.held if u.origin in cut else buf.deliverable).append(u)
    return buf
