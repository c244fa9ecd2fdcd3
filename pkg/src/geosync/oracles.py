"""Brute-force references for the test suite.

Each oracle enumerates its whole search space and shares its objective
with the production code, so a disagreement points at search logic rather
than at two diverging definitions.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Any, Iterator, Sequence

from geosync.crdt import ReplicaState
from geosync.planner import GroupPlan, kcenter_radius, plan_objective
from geosync.sync_filter import Update
from geosync.topology import LatencyMatrix

MAX_PLAN_N = 8
MAX_KCENTER_N = 10
MAX_MERGE_UPDATES = 6


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class OracleResult:
    optimum: Any
    witness: Any
    count: int


def restricted_growth(n: int, k: int) -> Iterator[tuple[int, ...]]:
    """All partitions of range(n) into exactly k blocks, as canonical label vectors in lex order."""

    def rec(prefix: list[int], opened: int) -> Iterator[tuple[int, ...]]:
        i = len(prefix)
        if i == n:
            if opened == k:
                yield tuple(prefix)
            return
        if k - opened > n - i:
            return
        for g in range(min(opened + 1, k)):
            prefix.append(g)
            yield from rec(prefix, max(opened, g + 1))
            prefix.pop()

    yield from rec([], 0)


def enumerate_plans(m: LatencyMatrix, k: int) -> OracleResult:
    """Minimum objective over every k-partition and every aggregator choice.

    Ties keep the first candidate in (assignment, aggregators) lexicographic
    order, matching the exact solver.
    """
    n = m.n
    if n > MAX_PLAN_N:
        raise OracleError(f"n={n} exceeds oracle cap {MAX_PLAN_N}")
    if not 1 <= k <= n:
        raise OracleError(f"k={k} out of range [1, {n}]")
    best, witness, count = math.inf, None, 0
    for assignment in restricted_growth(n, k):
        blocks = [[i for i in range(n) if assignment[i] == g] for g in range(k)]
        for aggs in itertools.product(*blocks):
            count += 1
            t = plan_objective(m.delay, assignment, aggs)
            if t < best:
                best, witness = t, GroupPlan(assignment, aggs, t)
    return OracleResult(best, witness, count)


def kcenter_opt(m: LatencyMatrix, k: int) -> OracleResult:
    """Exact k-center radius on the symmetrized delays, over all center sets."""
    n = m.n
    if n > MAX_KCENTER_N:
        raise OracleError(f"n={n} exceeds oracle cap {MAX_KCENTER_N}")
    if not 1 <= k <= n:
        raise OracleError(f"k={k} out of range [1, {n}]")
    sym = m.symmetrized()
    best, witness, count = math.inf, None, 0
    for centers in itertools.combinations(range(n), k):
        count += 1
        r = kcenter_radius(sym, centers)
        if r < best:
            best, witness = r, centers
    return OracleResult(best, witness, count)


def _apply(state: ReplicaState, seq: Sequence[Update]) -> ReplicaState:
    s = state.copy()
    for u in seq:
        s.merge(u)
    return s


def enumerate_merge_orders(updates: Sequence[Update], max_dup: int = 1,
                           initial: ReplicaState | None = None, *, exhaustive: bool = False) -> OracleResult:
    """Final states over every ordering and every duplication multiplicity 1..max_dup.

    ``optimum`` is True when all delivery sequences reach one state;
    ``witness`` is the set of distinct digests; ``count`` is the number of
    (permutation, multiplicity vector) pairs covered.

    The default walk is a dynamic program over consumed-copy vectors: the
    states reachable after delivering exactly ``c[i]`` copies of each update,
    in any order, are the merges of update ``i`` into the states reachable at
    ``c - e_i``. With ``exhaustive`` each sequence is replayed from scratch.
    """
    m = len(updates)
    if m > MAX_MERGE_UPDATES:
        raise OracleError(f"{m} updates exceeds oracle cap {MAX_MERGE_UPDATES}")
    if max_dup < 1:
        raise OracleError("max_dup must be >= 1")
    for u in updates:
        if u.epoch != 0:
            raise OracleError("oracle works within a single epoch; use epoch 0 updates")
    base = initial.copy() if initial is not None else ReplicaState()
    count = math.factorial(m) * max_dup ** m

    if exhaustive:
        digests = set()
        for mult in itertools.product(range(1, max_dup + 1), repeat=m):
            for perm in itertools.permutations(range(m)):
                seq = [updates[i] for i in perm for _ in range(mult[i])]
                digests.add(_apply(base, seq).digest())
        return OracleResult(len(digests) == 1, frozenset(digests), count)

    # predecessors c - e_i precede c in lexicographic product order
    reach: dict[tuple[int, ...], dict[tuple, ReplicaState]] = {(0,) * m: {base.frozen(): base}}
    finals: set[str] = set()
    for c in itertools.product(range(max_dup + 1), repeat=m):
        if not any(c):
            continue
        states: dict[tuple, ReplicaState] = {}
        for i in range(m):
            if c[i]:
                for prev in reach[c[:i] + (c[i] - 1,) + c[i + 1:]].values():
                    nxt = prev.copy()
                    nxt.merge(updates[i])
                    states.setdefault(nxt.frozen(), nxt)
        reach[c] = states
        if all(c):
            finals.update(s.digest() for s in states.values())
    return OracleResult(len(finals) == 1, frozenset(finals), count)
