"""Latency-aware group planning.

A plan partitions the nodes into ``k`` groups, each with one aggregator
that is also a member. Its cost is the worst member-aggregator latency
over all groups plus the worst latency between two aggregators.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from geosync.topology import LatencyMatrix


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class GroupPlan:
    """``assignment[i]`` is node i's group; ``aggregators[g]`` is group g's aggregator."""

    assignment: tuple[int, ...]
    aggregators: tuple[int, ...]
    objective_ms: float = math.nan

    def __post_init__(self):
        object.__setattr__(self, "assignment", tuple(int(g) for g in self.assignment))
        object.__setattr__(self, "aggregators", tuple(int(a) for a in self.aggregators))
        self.validate()

    @property
    def k(self) -> int:
        return len(self.aggregators)

    @property
    def n(self) -> int:
        return len(self.assignment)

    def validate(self, n: int | None = None) -> None:
        if n is not None and n != self.n:
            raise PlanError(f"plan covers {self.n} nodes, matrix has {n}")
        k = self.k
        if k < 1 or self.n < 1:
            raise PlanError("plan must have at least one node and one group")
        if any(not 0 <= g < k for g in self.assignment):
            raise PlanError("assignment refers to a group that does not exist")
        if len(set(self.assignment)) != k:
            raise PlanError("empty group")
        for g, a in enumerate(self.aggregators):
            if not 0 <= a < self.n or self.assignment[a] != g:
                raise PlanError(f"aggregator {a} is not a member of group {g}")

    def members(self, g: int) -> list[int]:
        return [i for i, h in enumerate(self.assignment) if h == g]

    def groups(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.k)]
        for i, g in enumerate(self.assignment):
            out[g].append(i)
        return out

    def is_aggregator(self, i: int) -> bool:
        return self.aggregators[self.assignment[i]] == i

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "groups": [{"aggregator": a, "members": self.members(g)} for g, a in enumerate(self.aggregators)],
            "objective_ms": self.objective_ms,
        }

    @classmethod
    def from_json(cls, obj: dict) -> GroupPlan:
        groups = obj["groups"]
        n = sum(len(g["members"]) for g in groups)
        assignment = [-1] * n
        for g, grp in enumerate(groups):
            for i in grp["members"]:
                if not 0 <= i < n or assignment[i] != -1:
                    raise PlanError(f"node {i} listed twice or out of range")
                assignment[i] = g
        if "k" in obj and obj["k"] != len(groups):
            raise PlanError("k does not match the number of groups")
        return cls(tuple(assignment), tuple(g["aggregator"] for g in groups),
                   float(obj.get("objective_ms", math.nan)))


def canonical(assignment: Sequence[int], aggregators: Sequence[int]) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Relabel groups in order of first appearance (node 0 is always in group 0)."""
    relabel: dict[int, int] = {}
    for g in assignment:
        relabel.setdefault(g, len(relabel))
    new_aggs = [0] * len(relabel)
    for g, a in enumerate(aggregators):
        if g in relabel:
            new_aggs[relabel[g]] = a
    return tuple(relabel[g] for g in assignment), tuple(new_aggs)


def plan_objective(delay: np.ndarray, assignment: Sequence[int], aggregators: Sequence[int]) -> float:
    """Worst member<->aggregator latency plus worst inter-aggregator latency.

    The single definition shared by every solver and by the brute-force
    oracles. Member latency takes the max of both directions; singleton
    groups contribute 0; a single group has no inter term.
    """
    intra = 0.0
    for i, g in enumerate(assignment):
        a = aggregators[g]
        if i != a:
            intra = max(intra, delay[i, a], delay[a, i])
    inter = 0.0
    for u in aggregators:
        for v in aggregators:
            if u != v:
                inter = max(inter, delay[u, v])
    return float(intra + inter)


def objective_T(m: LatencyMatrix, plan: GroupPlan) -> float:
    plan.validate(m.n)
    return plan_objective(m.delay, plan.assignment, plan.aggregators)


def make_plan(m: LatencyMatrix, assignment: Sequence[int], aggregators: Sequence[int]) -> GroupPlan:
    a, g = canonical(assignment, aggregators)
    plan = GroupPlan(a, g)
    plan.validate(m.n)
    return GroupPlan(a, g, plan_objective(m.delay, a, g))


# -- configuration ------------------------------------------------------------


@dataclass(frozen=True)
class PlannerConfig:
    k: int | None = None  # None -> choose k automatically
    solver: str = "exact"
    max_exact_n: int = 12
    damping_threshold: float = 0.20
    damping_window: int = 5

    def __post_init__(self):
        if self.solver not in ("exact", "kcenter"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.max_exact_n < 2:
            raise ValueError("max_exact_n must be >= 2")
        if self.damping_threshold <= 0 or self.damping_window < 1:
            raise ValueError("damping threshold and window must be positive")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be >= 1")


# -- exact solver -------------------------------------------------------------


def _aggregator_sets(delay: np.ndarray, sym: np.ndarray, k: int) -> tuple[float, list[tuple[tuple[int, ...], np.ndarray]]]:
    """Optimal objective over aggregator sets of size k, and every set attaining it.

    With the aggregator set fixed, sending each node to its nearest
    aggregator minimizes the worst member latency, so the optimum over all
    plans is a minimum over subsets. Each optimal set comes with its
    ``allowed[i, j]`` mask: node i may join aggregator ``aggs[j]`` without
    exceeding the optimum.
    """
    n = delay.shape[0]
    scored = []
    for aggs in itertools.combinations(range(n), k):
        cols = sym[:, aggs]
        intra = float(cols.min(axis=1).max())
        inter = float(delay[np.ix_(aggs, aggs)].max()) if k > 1 else 0.0  # zero diagonal
        scored.append((float(intra + inter), aggs, inter, cols))
    best = min(s[0] for s in scored)
    # float addition is monotone, so sym + inter <= best matches the objective's own rounding
    return best, [(aggs, cols + inter <= best) for t, aggs, inter, cols in scored if t <= best]


def _best_aggregators(delay: np.ndarray, groups: list[list[int]]) -> tuple[float, tuple[int, ...]]:
    """Lexicographically first aggregator choice with the lowest objective for a fixed partition."""
    best_t, best_aggs = math.inf, ()
    for aggs in itertools.product(*groups):
        t = plan_objective_groups(delay, groups, aggs)
        if t < best_t:
            best_t, best_aggs = t, aggs
    return best_t, best_aggs


def plan_objective_groups(delay: np.ndarray, groups: Sequence[Sequence[int]], aggs: Sequence[int]) -> float:
    assignment = [0] * sum(len(g) for g in groups)
    for g, members in enumerate(groups):
        for i in members:
            assignment[i] = g
    return plan_objective(delay, assignment, aggs)


def _completable(groups: list[list[int]], group_of: list[int], aggs: tuple[int, ...], allowed: np.ndarray) -> bool:
    """Can the partial partition be completed into an optimal plan using aggregator set ``aggs``?

    An aggregator that is already placed must lead the group it sits in.
    The remaining open groups need distinct, still unplaced aggregators
    that all their members may join (a bipartite matching); leftover
    aggregators open the remaining groups later. Unplaced nodes can always
    reach some aggregator, since the set attains the optimum.
    """
    k = len(aggs)
    lead = [-1] * len(groups)
    free = []
    for j, a in enumerate(aggs):
        g = group_of[a]
        if g < 0:
            free.append(j)
        elif lead[g] != -1:
            return False
        else:
            lead[g] = j
    for g, j in enumerate(lead):
        if j != -1 and not allowed[groups[g], j].all():
            return False
    pending = [g for g in range(len(groups)) if lead[g] == -1]
    if len(pending) > len(free):
        return False
    ok = {g: [j for j in free if allowed[groups[g], j].all()] for g in pending}
    match_of: dict[int, int] = {}  # aggregator slot -> group

    def augment(g: int, seen: set[int]) -> bool:
        for j in ok[g]:
            if j not in seen:
                seen.add(j)
                if j not in match_of or augment(match_of[j], seen):
                    match_of[j] = g
                    return True
        return False

    return all(augment(g, set()) for g in pending)


def solve_exact(m: LatencyMatrix, k: int, config: PlannerConfig | None = None) -> GroupPlan:
    """Optimal plan with exactly ``k`` non-empty groups.

    The optimal value comes from the aggregator-set minimum. A depth-first
    walk over canonical assignment vectors (node 0 in group 0, group g+1
    opened only after g), in lexicographic order, keeps only prefixes that
    some optimal aggregator set can still complete. That test is exact, so
    the walk never backtracks and returns the lexicographically smallest
    optimal assignment; among its aggregator choices the smallest indices
    win.
    """
    config = config or PlannerConfig()
    n = m.n
    if n > config.max_exact_n:
        raise PlanError(f"n={n} exceeds max_exact_n={config.max_exact_n}; use the k-center solver")
    if not 1 <= k <= n:
        raise PlanError(f"k={k} out of range [1, {n}]")
    delay = m.delay
    target, candidates = _aggregator_sets(delay, m.symmetrized(), k)

    groups: list[list[int]] = []
    group_of = [-1] * n
    for i in range(n):
        for g in range(min(len(groups) + 1, k)):
            if k - max(len(groups), g + 1) > n - i - 1:
                continue  # too few nodes left to open the remaining groups
            opened = g == len(groups)
            if opened:
                groups.append([])
            groups[g].append(i)
            group_of[i] = g
            if any(_completable(groups, group_of, aggs, allowed) for aggs, allowed in candidates):
                break
            groups[g].pop()
            if opened:
                groups.pop()
            group_of[i] = -1
        else:  # unreachable: the empty prefix is completable and the test is exact
            raise PlanError("no completion reaches the optimum")
    t, aggs = _best_aggregators(delay, groups)
    assignment = [0] * n
    for g, members in enumerate(groups):
        for i in members:
            assignment[i] = g
    if t > target:
        raise PlanError("aggregator choice misses the optimum")
    return GroupPlan(tuple(assignment), aggs, t)

# -- k-center heuristic -------------------------------------------------------


def kcenter_radius(sym: np.ndarray, centers: Sequence[int]) -> float:
    return float(sym[:, list(centers)].min(axis=1).max())


def solve_kcenter(m: LatencyMatrix, k: int) -> GroupPlan:
    """Farthest-point (Gonzalez) grouping on the symmetrized delays."""
    n = m.n
    if not 1 <= k <= n:
        raise PlanError(f"k={k} out of range [1, {n}]")
    sym = m.symmetrized()
    first = int(np.argmin(sym.max(axis=1)))
    centers = [first]
    nearest = sym[first].copy()
    for _ in range(k - 1):
        cand = nearest.copy()
        cand[centers] = -1.0
        nxt = int(np.argmax(cand))
        centers.append(nxt)
        nearest = np.minimum(nearest, sym[nxt])
    order = sorted(centers)
    owner = {}
    for i in range(n):
        if i in centers:
            owner[i] = i
            continue
        owner[i] = min(order, key=lambda c: (sym[i, c], c))
    label = {c: g for g, c in enumerate(order)}
    assignment = [label[owner[i]] for i in range(n)]
    return make_plan(m, assignment, order)


# -- group-count guidance -----------------------------------------------------


@dataclass(frozen=True)
class CostBreakdown:
    intra_msgs: float
    inter_msgs: float

    @property
    def total_msgs(self) -> float:
        return self.intra_msgs + self.inter_msgs


def cost_model(n: int, k: int) -> CostBreakdown:
    if not 1 <= k <= n:
        raise PlanError(f"k={k} out of range [1, {n}]")
    return CostBreakdown(2 * n * (n / k - 1), 2 * k * (k - 1))


def k_star(n: int) -> tuple[float, tuple[int, int]]:
    """Continuous cost-model optimum and the recommended integer search range."""
    if n < 2:
        raise PlanError("need at least 2 nodes")
    ks = (n * n / 2) ** (1 / 3)
    fk = math.floor(ks + 1e-12)
    if n < 4:
        lo, hi = 1, n
    elif n <= 13:
        lo, hi = n // 3, -(-n // 2)
    elif n <= 25:
        lo, hi = fk, -(-n // 2)
    elif n <= 50:
        lo, hi = fk, n // 3
    elif n <= 100:
        lo, hi = fk - 2, n // 3
    else:
        lo, hi = fk - 3, n // 3
    lo, hi = max(1, lo), min(n, hi)
    return ks, (lo, max(lo, hi))


def solve(m: LatencyMatrix, k: int, config: PlannerConfig | None = None) -> GroupPlan:
    config = config or PlannerConfig()
    if config.solver == "exact" and m.n <= config.max_exact_n:
        return solve_exact(m, k, config)
    return solve_kcenter(m, k)


def auto_plan(m: LatencyMatrix, config: PlannerConfig | None = None) -> GroupPlan:
    """Best plan across the recommended k range (or the configured fixed k)."""
    config = config or PlannerConfig()
    if config.k is not None:
        return solve(m, min(config.k, m.n), config)
    if m.n == 1:
        return make_plan(m, [0], [0])
    _, (lo, hi) = k_star(m.n)
    best = None
    for k in range(lo, hi + 1):
        plan = solve(m, k, config)
        if best is None or plan.objective_ms < best.objective_ms:
            best = plan
    return best


# -- re-group damping ---------------------------------------------------------


def should_regroup(history: Sequence[Iterable[tuple]], threshold: float = 0.20, window: int = 5) -> bool:
    """True when some pair deviates by more than ``threshold`` in each of the last ``window`` rounds.

    ``history`` is a sequence of rounds, each an iterable of
    ``(pair, baseline_ms, observed_ms)``. Zero baselines are ignored.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if len(history) < window:
        return False
    sustained = None
    for obs in list(history)[-window:]:
        over = {pair for pair, base, seen in obs if base > 0 and abs(seen - base) / base > threshold}
        sustained = over if sustained is None else sustained & over
        if not sustained:
            return False
    return True


@dataclass
class RegroupMonitor:
    """Sliding-window deviation tracker against the matrix a plan was built on."""

    baseline: LatencyMatrix
    threshold: float = 0.20
    window: int = 5
    _history: deque = field(default_factory=deque)

    def observe(self, m: LatencyMatrix) -> bool:
        base, seen = self.baseline.delay, m.delay
        n = m.n
        obs = [((i, j), base[i, j], seen[i, j]) for i in range(n) for j in range(n) if i != j]
        self._history.append(obs)
        while len(self._history) > self.window:
            self._history.popleft()
        return should_regroup(self._history, self.threshold, self.window)
