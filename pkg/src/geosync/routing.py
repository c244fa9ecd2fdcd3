"""Single-relay detours for inter-aggregator links."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from geosync.planner import GroupPlan
from geosync.topology import LatencyMatrix

DEFAULT_MIN_GAIN = 0.05


@dataclass(frozen=True)
class Route:
    src: int
    dst: int
    relay: int | None
    effective_ms: float
    direct_ms: float

    @property
    def is_direct(self) -> bool:
        return self.relay is None

    def to_json(self) -> dict:
        return {"src": self.src, "dst": self.dst, "relay": self.relay,
                "effective_ms": self.effective_ms, "direct_ms": self.direct_ms}


def best_path(m: LatencyMatrix, src: int, dst: int, candidate_relays: Iterable[int],
              min_gain: float = DEFAULT_MIN_GAIN) -> Route:
    """Relay through the cheapest candidate only if it beats direct by ``min_gain``."""
    if src == dst:
        raise ValueError("src and dst must differ")
    direct = m[src, dst]
    best_r, best_cost = None, float("inf")
    for r in sorted(set(candidate_relays)):
        if r in (src, dst):
            raise ValueError(f"relay {r} is an endpoint")
        cost = m[src, r] + m[r, dst]
        if cost < best_cost:
            best_r, best_cost = r, cost
    if best_r is not None and best_cost < (1.0 - min_gain) * direct:
        return Route(src, dst, best_r, best_cost, direct)
    return Route(src, dst, None, direct, direct)


class RoutePlan(dict):
    """Maps ``(src, dst)`` aggregator pairs to their :class:`Route`."""

    def effective(self, src: int, dst: int, m: LatencyMatrix) -> float:
        route = self.get((src, dst))
        return route.effective_ms if route is not None else m[src, dst]

    def relayed(self) -> list[Route]:
        return [r for r in self.values() if not r.is_direct]

    def to_json(self) -> list[dict]:
        return [self[key].to_json() for key in sorted(self)]


def build_route_plan(m: LatencyMatrix, plan: GroupPlan, min_gain: float = DEFAULT_MIN_GAIN) -> RoutePlan:
    """Routes for every ordered aggregator pair; member links stay direct."""
    plan.validate(m.n)
    routes = RoutePlan()
    for u in plan.aggregators:
        for v in plan.aggregators:
            if u != v:
                relays = [r for r in range(m.n) if r not in (u, v)]
                routes[(u, v)] = best_path(m, u, v, relays, min_gain)
    return routes


def direct_routes(m: LatencyMatrix, plan: GroupPlan) -> RoutePlan:
    return build_route_plan(m, plan, min_gain=1.0)
