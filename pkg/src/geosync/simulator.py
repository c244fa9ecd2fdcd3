"""Round-based simulation of flat vs. grouped all-to-all synchronization.

Each round is one epoch. A flat round has every node send its updates
directly to every other node; its makespan is the slowest directed link.
A grouped round runs three barrier stages: members send to their
aggregator (gather), aggregators filter and exchange over the route plan
(inter), then aggregators send the merged result back (scatter).

Transmission time is latency only unless ``bandwidth_mbps`` is set, in
which case each message also pays its serialization time.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

from geosync._rng import rng_for
from geosync.metrics import summarize
from geosync.crdt import EpochReplica, visibility_delay_bound
from geosync.planner import GroupPlan, PlannerConfig, RegroupMonitor, auto_plan, plan_objective
from geosync.routing import RoutePlan, build_route_plan, direct_routes
from geosync.sync_filter import AggregatorState, FilterStats, Update, aggregate_and_filter
from geosync.topology import LatencyMatrix, LatencyTrace
from geosync.workload import WorkloadConfig, WorkloadGenerator, initial_state

FAILURE_KINDS = ("aggregator_crash", "node_crash", "partition", "heal")


class SimError(ValueError):
    pass


class InvariantViolation(AssertionError):
    pass


@dataclass(frozen=True)
class Failure:
    round: int
    kind: str
    node: int | None = None
    groups: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        if self.kind not in FAILURE_KINDS:
            raise SimError(f"unknown failure kind {self.kind!r}")
        if self.kind in ("aggregator_crash", "node_crash") and self.node is None:
            raise SimError(f"{self.kind} needs a node")
        if self.kind == "partition":
            if not self.groups or len(self.groups) < 2:
                raise SimError("partition needs at least two sides")
            object.__setattr__(self, "groups", tuple(tuple(int(x) for x in g) for g in self.groups))

    def to_json(self) -> dict:
        out = {"round": self.round, "kind": self.kind}
        if self.node is not None:
            out["node"] = self.node
        if self.groups is not None:
            out["groups"] = [list(g) for g in self.groups]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> Failure:
        groups = obj.get("groups")
        return cls(int(obj["round"]), obj["kind"], obj.get("node"),
                   tuple(tuple(g) for g in groups) if groups else None)


@dataclass(frozen=True)
class SimConfig:
    rounds: int = 100
    round_interval_ms: int = 10
    mode: str = "grouped"
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    min_gain: float = 0.05
    tiv_routing: bool = True
    filtering: bool = True
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    failures: tuple[Failure, ...] = ()
    retransmit_timeout_ms: float = 200.0
    loss_rate: float = 0.0
    bandwidth_mbps: float | None = None
    seed: int = 0
    initial_plan: GroupPlan | None = None  # used until the first re-plan

    def __post_init__(self):
        if self.rounds < 1:
            raise SimError("rounds must be >= 1")
        if self.mode not in ("baseline", "grouped"):
            raise SimError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.loss_rate <= 1.0:
            raise SimError("loss_rate must lie in [0, 1]")
        if self.retransmit_timeout_ms < 0:
            raise SimError("retransmit timeout must be non-negative")
        if self.bandwidth_mbps is not None and self.bandwidth_mbps <= 0:
            raise SimError("bandwidth must be positive")

    def to_json(self) -> dict:
        out = asdict(self)
        out["failures"] = [f.to_json() for f in self.failures]
        out["initial_plan"] = self.initial_plan.to_json() if self.initial_plan is not None else None
        return out


@dataclass
class RoundResult:
    round: int
    kind: str  # baseline | grouped | fallback | degraded
    makespan_ms: float
    stage_ms: tuple[float, float, float]
    per_node_msgs: list[int]
    link_msgs: dict[tuple[int, int], int]
    link_bytes: dict[tuple[int, int], int]
    stage_bytes: tuple[int, int, int]
    filter: FilterStats = field(default_factory=FilterStats)
    baseline_makespan_ms: float = 0.0
    objective_ms: float | None = None
    plan_id: int | None = None
    events: list[str] = field(default_factory=list)
    relay_bytes: int = 0
    retransmit_bytes: int = 0
    late_updates: int = 0
    max_extra_visibility_ms: float = 0.0
    visibility_bound_ms: float = 0.0

    @property
    def total_msgs(self) -> int:
        return sum(self.link_msgs.values())

    @property
    def total_bytes(self) -> int:
        return sum(self.link_bytes.values())

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "kind": self.kind,
            "makespan_ms": self.makespan_ms,
            "stage_ms": list(self.stage_ms),
            "baseline_makespan_ms": self.baseline_makespan_ms,
            "objective_ms": self.objective_ms,
            "plan_id": self.plan_id,
            "per_node_msgs": list(self.per_node_msgs),
            "link_msgs": [[i, j, c] for (i, j), c in sorted(self.link_msgs.items())],
            "link_bytes": [[i, j, b] for (i, j), b in sorted(self.link_bytes.items())],
            "stage_bytes": list(self.stage_bytes),
            "relay_bytes": self.relay_bytes,
            "retransmit_bytes": self.retransmit_bytes,
            "filter": self.filter.to_json(),
            "events": list(self.events),
            "late_updates": self.late_updates,
            "max_extra_visibility_ms": self.max_extra_visibility_ms,
            "visibility_bound_ms": self.visibility_bound_ms,
        }

    @classmethod
    def from_json(cls, obj: dict) -> RoundResult:
        return cls(
            round=obj["round"], kind=obj["kind"], makespan_ms=obj["makespan_ms"],
            stage_ms=tuple(obj["stage_ms"]), per_node_msgs=list(obj["per_node_msgs"]),
            link_msgs={(i, j): c for i, j, c in obj["link_msgs"]},
            link_bytes={(i, j): b for i, j, b in obj["link_bytes"]},
            stage_bytes=tuple(obj["stage_bytes"]), filter=FilterStats(**obj["filter"]),
            baseline_makespan_ms=obj["baseline_makespan_ms"], objective_ms=obj["objective_ms"],
            plan_id=obj["plan_id"], events=list(obj["events"]), relay_bytes=obj["relay_bytes"],
            retransmit_bytes=obj["retransmit_bytes"], late_updates=obj["late_updates"],
            max_extra_visibility_ms=obj["max_extra_visibility_ms"],
            visibility_bound_ms=obj["visibility_bound_ms"],
        )


def _sizes_by_origin(updates: Iterable[Update], n: int) -> list[int]:
    sizes = [0] * n
    for u in updates:
        sizes[u.origin] += u.size_bytes
    return sizes


def _xfer(bandwidth_mbps: float | None) -> Callable[[float, int], float]:
    if bandwidth_mbps is None:
        return lambda latency, nbytes: latency
    per_byte_ms = 8.0 / (bandwidth_mbps * 1e3)
    return lambda latency, nbytes: latency + nbytes * per_byte_ms


def _node_msgs(n: int, link_msgs: dict[tuple[int, int], int]) -> list[int]:
    counts = [0] * n
    for (i, j), c in link_msgs.items():
        counts[i] += c
        counts[j] += c
    return counts


def baseline_round(m: LatencyMatrix, updates: Sequence[Update] = (), *,
                   reachable: Callable[[int, int], bool] | None = None,
                   bandwidth_mbps: float | None = None) -> RoundResult:
    """Flat all-to-all: every ordered (reachable) pair exchanges directly, no filtering."""
    n = m.n
    if n < 2:
        raise SimError("need at least 2 nodes")
    xfer = _xfer(bandwidth_mbps)
    sizes = _sizes_by_origin(updates, n)
    link_msgs, link_bytes = {}, {}
    makespan = 0.0
    for i in range(n):
        for j in range(n):
            if i == j or (reachable is not None and not reachable(i, j)):
                continue
            link_msgs[(i, j)] = 1
            link_bytes[(i, j)] = sizes[i]
            makespan = max(makespan, xfer(m[i, j], sizes[i]))
    total = sum(link_bytes.values())
    return RoundResult(
        round=0, kind="baseline", makespan_ms=makespan, stage_ms=(0.0, makespan, 0.0),
        per_node_msgs=_node_msgs(n, link_msgs), link_msgs=link_msgs, link_bytes=link_bytes,
        stage_bytes=(0, total, 0), baseline_makespan_ms=makespan,
    )


def grouped_round(m: LatencyMatrix, plan: GroupPlan, routes: RoutePlan, updates: Sequence[Update] = (),
                  states: dict[int, AggregatorState] | None = None, *,
                  bandwidth_mbps: float | None = None) -> tuple[RoundResult, list[Update]]:
    """Gather, filter-and-exchange, scatter. Returns the round and the updates forwarded between groups.

    ``states`` maps each aggregator to its filter state; ``None`` forwards
    everything unfiltered.
    """
    plan.validate(m.n)
    n, k = m.n, plan.k
    xfer = _xfer(bandwidth_mbps)
    groups = plan.groups()
    sizes = _sizes_by_origin(updates, n)
    link_msgs: dict[tuple[int, int], int] = {}
    link_bytes: dict[tuple[int, int], int] = {}

    gather_ms, gather_bytes = 0.0, 0
    for g, members in enumerate(groups):
        a = plan.aggregators[g]
        for i in members:
            if i != a:
                link_msgs[(i, a)] = 1
                link_bytes[(i, a)] = sizes[i]
                gather_bytes += sizes[i]
                gather_ms = max(gather_ms, xfer(m[i, a], sizes[i]))

    stats = FilterStats()
    kept_by_group: list[list[Update]] = []
    for g, members in enumerate(groups):
        member_set = set(members)
        incoming = [u for u in updates if u.origin in member_set]
        if states is None:
            kept = list(incoming)
            size = sum(u.size_bytes for u in incoming)
            part = FilterStats(kept=len(kept), bytes_in=size, bytes_out=size)
        else:
            kept, part = aggregate_and_filter(incoming, states[plan.aggregators[g]])
        stats = stats.add(part)
        kept_by_group.append(kept)
    kept_bytes = [sum(u.size_bytes for u in kept) for kept in kept_by_group]

    inter_ms, inter_bytes, relay_bytes = 0.0, 0, 0
    for g, u in enumerate(plan.aggregators):
        for h, v in enumerate(plan.aggregators):
            if g == h:
                continue
            route = routes.get((u, v))
            eff = route.effective_ms if route is not None else m[u, v]
            link_msgs[(u, v)] = 1
            link_bytes[(u, v)] = kept_bytes[g]
            inter_bytes += kept_bytes[g]
            if route is not None and not route.is_direct:
                relay_bytes += kept_bytes[g]
            inter_ms = max(inter_ms, xfer(eff, kept_bytes[g]))

    scatter_ms, scatter_bytes = 0.0, 0
    all_kept = sum(kept_bytes)
    for g, members in enumerate(groups):
        a = plan.aggregators[g]
        own = {i: 0 for i in members}
        for upd in kept_by_group[g]:
            own[upd.origin] += upd.size_bytes
        for i in members:
            if i != a:
                nbytes = all_kept - own[i]
                link_msgs[(a, i)] = 1
                link_bytes[(a, i)] = nbytes
                scatter_bytes += nbytes
                scatter_ms = max(scatter_ms, xfer(m[a, i], nbytes))

    forwarded = [u for kept in kept_by_group for u in kept]
    result = RoundResult(
        round=0, kind="grouped", makespan_ms=gather_ms + inter_ms + scatter_ms,
        stage_ms=(gather_ms, inter_ms, scatter_ms), per_node_msgs=_node_msgs(n, link_msgs),
        link_msgs=link_msgs, link_bytes=link_bytes,
        stage_bytes=(gather_bytes, inter_bytes, scatter_bytes), filter=stats,
        objective_ms=plan_objective(m.delay, plan.assignment, plan.aggregators),
        relay_bytes=relay_bytes,
    )
    return result, forwarded


# -- full simulation ----------------------------------------------------------


@dataclass
class SimReport:
    config: SimConfig
    n: int
    rounds: list[RoundResult]
    plans: list[dict]
    digests: list[list[str | None]]
    final_digests: list[str]
    stalled_epochs: int
    manifest: dict | None = None

    @property
    def makespans(self) -> list[float]:
        return [r.makespan_ms for r in self.rounds]

    def totals(self) -> dict:
        f = FilterStats()
        for r in self.rounds:
            f = f.add(r.filter)
        return {
            "bytes": sum(r.total_bytes for r in self.rounds),
            "msgs": sum(r.total_msgs for r in self.rounds),
            "inter_bytes": sum(r.stage_bytes[1] for r in self.rounds),
            "filtered_bytes": f.bytes_in - f.bytes_out,
            "retransmit_bytes": sum(r.retransmit_bytes for r in self.rounds),
            "late_updates": sum(r.late_updates for r in self.rounds),
            "filter": f.to_json(),
        }

    def converged(self) -> bool:
        return len(set(self.final_digests)) == 1

    def to_json(self) -> dict:
        out = {
            "config": self.config.to_json(),
            "n": self.n,
            "rounds": [r.to_json() for r in self.rounds],
            "plans": self.plans,
            "totals": self.totals(),
            "makespan": summarize(self.makespans),
            "digests": self.digests,
            "final_digests": self.final_digests,
            "stalled_epochs": self.stalled_epochs,
        }
        if self.manifest is not None:
            out["manifest"] = self.manifest
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1) + "\n"

    def to_csv(self) -> str:
        out = io.StringIO()
        if self.manifest is not None:
            out.write("# manifest=" + json.dumps(self.manifest, sort_keys=True) + "\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["round", "makespan_ms", "gather_ms", "inter_ms", "scatter_ms", "msgs", "bytes_in", "bytes_out"])
        for r in self.rounds:
            w.writerow([r.round, repr(r.makespan_ms), *(repr(x) for x in r.stage_ms), r.total_msgs,
                        r.filter.bytes_in, r.filter.bytes_out])
        return out.getvalue()


@dataclass
class _ReplicaQueue:
    replica: EpochReplica
    pending: dict[int, list[Update]] = field(default_factory=dict)
    held: dict[int, list[Update]] = field(default_factory=dict)  # epoch -> updates waiting on a heal


class Simulation:
    """Stateful driver; :func:`run_simulation` is the usual entry point."""

    def __init__(self, trace: LatencyTrace, config: SimConfig):
        self.trace = trace
        self.config = config
        self.n = trace.n
        if self.n < 2:
            raise SimError("need at least 2 nodes")
        for f in config.failures:
            if f.node is not None and not 0 <= f.node < self.n:
                raise SimError(f"failure refers to node {f.node} outside [0, {self.n})")
            for side in f.groups or ():
                if any(not 0 <= x < self.n for x in side):
                    raise SimError("partition refers to a node outside the trace")
        if config.initial_plan is not None:
            config.initial_plan.validate(self.n)
        self.workload = WorkloadGenerator(self.n, config.workload, config.seed)
        init = initial_state(config.workload.keyspace)
        self.queues = [_ReplicaQueue(EpochReplica(i, init)) for i in range(self.n)]
        self.plan: GroupPlan | None = None
        self.routes: RoutePlan | None = None
        self.plan_id: int | None = None
        self.plans: list[dict] = []
        self.monitor: RegroupMonitor | None = None
        self.force_replan = False
        self.partition: tuple[frozenset[int], ...] | None = None
        self.carry: list[Update] = []
        self.digests: list[list[str | None]] = []
        self.stalled_epochs = 0

    # -- helpers --

    def _side(self, i: int) -> int:
        for s, side in enumerate(self.partition or ()):
            if i in side:
                return s
        return -1

    def _reachable_fn(self, crashed: set[int]) -> Callable[[int, int], bool] | None:
        if self.partition is None and not crashed:
            return None

        def ok(i: int, j: int) -> bool:
            if i in crashed or j in crashed:
                return False
            return self.partition is None or self._side(i) == self._side(j)
        return ok

    def _new_plan(self, m: LatencyMatrix) -> None:
        cfg = self.config
        if not self.plans and cfg.initial_plan is not None:
            self.plan = cfg.initial_plan
        else:
            self.plan = auto_plan(m, cfg.planner)
        self.routes = build_route_plan(m, self.plan, cfg.min_gain) if cfg.tiv_routing else direct_routes(m, self.plan)
        self.plan_id = len(self.plans)
        self.plans.append({"plan": self.plan.to_json(), "routes": self.routes.to_json()})
        self.monitor = RegroupMonitor(m, cfg.planner.damping_threshold, cfg.planner.damping_window)

    def _deliver(self, epoch: int, updates: Iterable[Update], reachable) -> None:
        for q in self.queues:
            r = q.replica.node
            for u in updates:
                if reachable is None or u.origin == r or reachable(u.origin, r):
                    q.pending.setdefault(epoch, []).append(u)
                else:
                    q.held.setdefault(epoch, []).append(u)

    def _release(self, reachable) -> None:
        for q in self.queues:
            r = q.replica.node
            for epoch in sorted(q.held):
                still = []
                for u in q.held[epoch]:
                    if reachable is None or reachable(u.origin, r):
                        q.pending.setdefault(epoch, []).append(u)
                    else:
                        still.append(u)
                if still:
                    q.held[epoch] = still
                else:
                    del q.held[epoch]

    def _close_ready(self, upto: int) -> None:
        for q in self.queues:
            rep = q.replica
            while rep.epoch <= upto and not any(e <= rep.epoch for e in q.held):
                e = rep.epoch
                out = rep.close(q.pending.pop(e, []))
                while len(self.digests) <= e:
                    self.digests.append([None] * self.n)
                self.digests[e][rep.node] = out.digest

    def _check_snapshots(self) -> None:
        for e, row in enumerate(self.digests):
            seen = {d for d in row if d is not None}
            if len(seen) > 1:
                raise InvariantViolation(f"replicas diverged at epoch {e}")

    # -- main loop --

    def step(self, r: int) -> RoundResult:
        cfg = self.config
        m = self.trace.at(r * cfg.round_interval_ms)
        events: list[str] = []
        crashed: set[int] = set()
        agg_crash = False
        for f in (f for f in cfg.failures if f.round == r):
            if f.kind == "partition":
                self.partition = tuple(frozenset(s) for s in f.groups)
                events.append("partition")
            elif f.kind == "heal":
                if self.partition is not None:
                    events.append("heal")
                    self.force_replan = True
                self.partition = None
            elif f.kind == "node_crash":
                crashed.add(f.node)
                events.append(f"node_crash:{f.node}")
                self.force_replan = True
            elif f.kind == "aggregator_crash":
                events.append(f"aggregator_crash:{f.node}")
                if cfg.mode == "grouped" and self.plan is not None and f.node in self.plan.aggregators:
                    agg_crash = True

        reachable = self._reachable_fn(crashed)
        self._release(reachable)
        active = set(range(self.n)) - crashed
        updates, _ = self.workload.epoch(r, active)

        # first transmissions lost with probability loss_rate; retransmitted direct after the timeout
        lost: list[Update] = []
        if cfg.loss_rate > 0 and updates:
            draws = rng_for(cfg.seed, 3, r).random(len(updates))
            lost = [u for u, x in zip(updates, draws) if x < cfg.loss_rate]
            lost_ids = {u.txn_id for u in lost}
            updates = [u for u in updates if u.txn_id not in lost_ids]

        flat = baseline_round(m, updates, bandwidth_mbps=cfg.bandwidth_mbps)
        forwarded: list[Update] | None = None
        if cfg.mode == "baseline":
            if reachable is not None:
                result = baseline_round(m, updates, reachable=reachable, bandwidth_mbps=cfg.bandwidth_mbps)
                result.kind = "degraded"
            else:
                result = flat
        elif reachable is not None:
            result = baseline_round(m, updates, reachable=reachable, bandwidth_mbps=cfg.bandwidth_mbps)
            result.kind = "degraded"
            self.force_replan = True
        elif agg_crash:
            result = baseline_round(m, updates, bandwidth_mbps=cfg.bandwidth_mbps)
            result.kind = "fallback"
            result.plan_id = self.plan_id
            events.append("fallback_direct")
            self.force_replan = True
        else:
            if self.plan is None or self.force_replan:
                if self.plan is not None:
                    events.append("replan")
                self._new_plan(m)
                self.force_replan = False
            elif self.monitor.observe(m):
                events.append("regroup")
                self._new_plan(m)
            states = None
            if cfg.filtering:
                states = {a: AggregatorState(r, dict(self.queues[a].replica.base_versions()))
                          for a in self.plan.aggregators}
            result, forwarded = grouped_round(m, self.plan, self.routes, updates, states,
                                              bandwidth_mbps=cfg.bandwidth_mbps)
            result.plan_id = self.plan_id
        result.round = r
        result.baseline_makespan_ms = flat.makespan_ms
        result.events = events + result.events

        # retransmissions and epoch cutoff
        carry_next: list[Update] = []
        on_time_lost: list[Update] = []
        if lost:
            tau = cfg.retransmit_timeout_ms
            wan = float(m.delay.max())
            result.visibility_bound_ms = visibility_delay_bound(tau, wan)
            barrier = result.makespan_ms
            for u in lost:
                dests = [j for j in range(self.n) if j != u.origin and (reachable is None or reachable(u.origin, j))]
                arrival = max((tau + m[u.origin, j] for j in dests), default=0.0)
                for j in dests:
                    result.link_bytes[(u.origin, j)] = result.link_bytes.get((u.origin, j), 0) + u.size_bytes
                    result.retransmit_bytes += u.size_bytes
                if arrival > barrier:
                    carry_next.append(u)
                    result.late_updates += 1
                    extra = arrival - barrier
                    result.max_extra_visibility_ms = max(result.max_extra_visibility_ms, extra)
                else:
                    on_time_lost.append(u)

        # what each replica receives for this epoch
        if forwarded is not None:
            delivered_ids = {u.txn_id for u in forwarded}
            local = [u for u in updates if u.txn_id not in delivered_ids]
            for q in self.queues:
                own = [u for u in local if u.origin == q.replica.node]
                q.pending.setdefault(r, []).extend(own)
            self._deliver(r, forwarded + on_time_lost + self.carry, reachable)
        else:
            self._deliver(r, updates + on_time_lost + self.carry, reachable)
        self.carry = carry_next
        self._close_ready(r)
        self._check_round(result)
        return result

    def _check_round(self, result: RoundResult) -> None:
        bound = 2 * (self.n - 1)
        if any(c > bound for c in result.per_node_msgs):
            raise InvariantViolation(f"round {result.round}: a node exceeded {bound} messages")
        if result.kind == "baseline" and result.stage_ms != (0.0, result.makespan_ms, 0.0):
            raise InvariantViolation("flat round must report its makespan as the inter stage")
        f = result.filter
        if f.bytes_out > f.bytes_in:
            raise InvariantViolation("filtering increased bytes")
        if result.max_extra_visibility_ms > result.visibility_bound_ms + 1e-9:
            raise InvariantViolation(f"round {result.round}: visibility delay above tau + WAN bound")
        self._check_snapshots()

    def drain(self) -> None:
        """Close one more epoch to absorb updates carried past the last round."""
        e = self.config.rounds
        reachable = self._reachable_fn(set())
        self._release(reachable)
        self._deliver(e, self.carry, reachable)
        self.carry = []
        self._close_ready(e)
        self._check_snapshots()

    def run(self) -> SimReport:
        results = [self.step(r) for r in range(self.config.rounds)]
        self.drain()
        # epochs some replica could not snapshot because a partition never healed
        self.stalled_epochs = sum(self.config.rounds + 1 - q.replica.epoch for q in self.queues)
        final = [q.replica.state.digest() for q in self.queues]
        return SimReport(self.config, self.n, results, self.plans, self.digests, final, self.stalled_epochs)


def run_simulation(trace: LatencyTrace, config: SimConfig) -> SimReport:
    return Simulation(trace, config).run()
