"""Percentiles, CDFs, communication heatmaps and A/B comparison of run reports.

Functions accept either a live ``SimReport`` or its parsed JSON form.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

DEFAULT_PERCENTILES = (0.5, 0.9, 0.99)


def percentile(samples: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: the ceil(p*n)-th smallest sample (1-based)."""
    if len(samples) == 0:
        raise ValueError("percentile of an empty sample")
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    ordered = sorted(samples)
    rank = max(1, math.ceil(p * len(ordered) - 1e-9))
    return float(ordered[rank - 1])


def summarize(samples: Sequence[float], ps: Sequence[float] = DEFAULT_PERCENTILES) -> dict:
    if len(samples) == 0:
        return {"count": 0}
    out = {"count": len(samples), "mean": float(np.mean(samples)),
           "min": float(min(samples)), "max": float(max(samples))}
    for p in ps:
        out[f"p{round(p * 100):g}"] = percentile(samples, p)
    return out


@dataclass(frozen=True)
class Cdf:
    values: tuple[float, ...]
    fractions: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != len(self.fractions) or not self.values:
            raise ValueError("a CDF needs matching, non-empty values and fractions")
        if any(b < a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("CDF values must ascend")
        if any(b < a for a, b in zip(self.fractions, self.fractions[1:])) or self.fractions[-1] != 1.0:
            raise ValueError("CDF fractions must ascend to 1")

    @classmethod
    def from_samples(cls, samples: Sequence[float]) -> Cdf:
        ordered = sorted(float(x) for x in samples)
        n = len(ordered)
        return cls(tuple(ordered), tuple((i + 1) / n for i in range(n)))

    def at(self, x: float) -> float:
        """Fraction of samples <= x."""
        idx = int(np.searchsorted(self.values, x, side="right"))
        return 0.0 if idx == 0 else self.fractions[idx - 1]

    def to_csv(self, header: str | None = None) -> str:
        out = io.StringIO()
        if header:
            out.write(header)
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["value", "cum_fraction"])
        for v, f in zip(self.values, self.fractions):
            w.writerow([repr(v), repr(f)])
        return out.getvalue()


def _as_dict(report: Any) -> dict:
    return report if isinstance(report, dict) else report.to_json()


def makespans(report: Any) -> list[float]:
    return [r["makespan_ms"] for r in _as_dict(report)["rounds"]]


def comm_heatmap(report: Any) -> np.ndarray:
    """Messages i->j summed over rounds, scaled so the busiest link is 1."""
    rep = _as_dict(report)
    n = rep["n"]
    counts = np.zeros((n, n))
    for r in rep["rounds"]:
        for i, j, c in r["link_msgs"]:
            if i != j:
                counts[i, j] += c
    peak = counts.max()
    return counts / peak if peak > 0 else counts


def heatmap_csv(h: np.ndarray, header: str | None = None) -> str:
    out = io.StringIO()
    if header:
        out.write(header)
    w = csv.writer(out, lineterminator="\n")
    for row in h:
        w.writerow([repr(float(x)) for x in row])
    return out.getvalue()


def _reduction(value: float, base: float) -> float:
    return 0.0 if base == 0 else 1.0 - value / base


@dataclass(frozen=True)
class Comparison:
    """``a`` measured against baseline ``b``; positive reductions mean ``a`` is cheaper."""

    makespan_delta_ms: dict[str, float]
    makespan_delta_pct: dict[str, float]
    bytes_reduction: float
    msgs_reduction: float
    inter_bytes_reduction: float
    per_round_reduction_mean: float

    def to_json(self) -> dict:
        return {
            "makespan_delta_ms": self.makespan_delta_ms,
            "makespan_delta_pct": self.makespan_delta_pct,
            "bytes_reduction": self.bytes_reduction,
            "msgs_reduction": self.msgs_reduction,
            "inter_bytes_reduction": self.inter_bytes_reduction,
            "per_round_reduction_mean": self.per_round_reduction_mean,
        }


def _totals(rep: dict) -> tuple[int, int, int]:
    rounds = rep["rounds"]
    total_bytes = sum(b for r in rounds for _, _, b in r["link_bytes"])
    total_msgs = sum(c for r in rounds for _, _, c in r["link_msgs"])
    inter = sum(r["stage_bytes"][1] for r in rounds)
    return total_bytes, total_msgs, inter


def compare(a: Any, b: Any, ps: Sequence[float] = DEFAULT_PERCENTILES) -> Comparison:
    ra, rb = _as_dict(a), _as_dict(b)
    if ra["n"] != rb["n"] or len(ra["rounds"]) != len(rb["rounds"]):
        raise ValueError("reports differ in node count or round count")
    ma, mb = makespans(ra), makespans(rb)
    stats_a = {"mean": float(np.mean(ma)), **{f"p{round(p * 100):g}": percentile(ma, p) for p in ps}}
    stats_b = {"mean": float(np.mean(mb)), **{f"p{round(p * 100):g}": percentile(mb, p) for p in ps}}
    delta = {k: stats_b[k] - stats_a[k] for k in stats_a}
    pct = {k: _reduction(stats_a[k], stats_b[k]) for k in stats_a}
    ba, ca, ia = _totals(ra)
    bb, cb, ib = _totals(rb)
    per_round = [_reduction(x, y) for x, y in zip(ma, mb)]
    return Comparison(delta, pct, _reduction(ba, bb), _reduction(ca, cb), _reduction(ia, ib),
                      float(np.mean(per_round)))
