"""WAN latency matrices and traces: loading, synthesis, and relay-violation scans."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from geosync._rng import rng_for

DIAGONAL_TOLERANCE = 1e-9
DEFAULT_KNOTS = 8
DEFAULT_STEP_MS = 100


class MatrixError(ValueError):
    """Raised for malformed latency matrices or traces."""


@dataclass(frozen=True)
class LatencyMatrix:
    """Directed one-way delays in milliseconds; ``delay[i, j]`` is i -> j."""

    delay: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        d = np.array(self.delay, dtype=float, copy=True)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise MatrixError(f"non-square grid: shape {d.shape}")
        if d.shape[0] == 0:
            raise MatrixError("empty matrix")
        if not np.all(np.isfinite(d)):
            raise MatrixError("non-finite entry")
        if np.any(d < 0):
            raise MatrixError("negative entry")
        diag = np.diag(d)
        if np.any(np.abs(diag) > DIAGONAL_TOLERANCE):
            i = int(np.argmax(np.abs(diag)))
            raise MatrixError(f"nonzero diagonal at node {i}: {diag[i]}")
        np.fill_diagonal(d, 0.0)
        d.setflags(write=False)
        object.__setattr__(self, "delay", d)
        if self.labels is not None:
            labels = tuple(str(x) for x in self.labels)
            if len(labels) != d.shape[0]:
                raise MatrixError(f"{len(labels)} labels for {d.shape[0]} nodes")
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.delay.shape[0]

    def __getitem__(self, ij):
        return float(self.delay[ij])

    def __eq__(self, other):
        if not isinstance(other, LatencyMatrix):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.delay, other.delay)

    def __hash__(self):
        return hash((self.delay.tobytes(), self.labels))

    def scaled(self, factor: float) -> LatencyMatrix:
        return LatencyMatrix(self.delay * factor, self.labels)

    def symmetrized(self) -> np.ndarray:
        """Pairwise max of both directions, the distance used for clustering."""
        return np.maximum(self.delay, self.delay.T)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "labels": list(self.labels) if self.labels is not None else None,
            "delay": self.delay.tolist(),
        }


def _read_text(source: IO | bytes | str) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def _parse_row(row: Sequence[str]) -> list[float] | None:
    try:
        return [float(x) for x in row]
    except ValueError:
        return None


def load_matrix(source: IO | bytes | str, format: str = "csv", *, rtt: bool = False) -> LatencyMatrix:
    """Parse a CSV or JSON latency grid.

    With ``rtt=True`` the input holds round-trip times and every entry is
    halved to obtain one-way delays.
    """
    text = _read_text(source)
    labels = None
    if format == "csv":
        rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
        if not rows:
            raise MatrixError("empty input")
        rows = [[c.strip() for c in r] for r in rows]
        if _parse_row(rows[0]) is None:
            labels, rows = rows[0], rows[1:]
        grid = []
        for lineno, row in enumerate(rows, start=1):
            values = _parse_row(row)
            if values is None:
                raise MatrixError(f"non-numeric entry in row {lineno}")
            grid.append(values)
    elif format == "json":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MatrixError(f"invalid JSON: {exc}") from None
        if not isinstance(obj, dict) or "delay" not in obj:
            raise MatrixError('JSON matrix needs a "delay" field')
        grid = obj["delay"]
        labels = obj.get("labels")
        if "n" in obj and obj["n"] != len(grid):
            raise MatrixError(f"n={obj['n']} but {len(grid)} rows")
    else:
        raise MatrixError(f"unknown matrix format {format!r}")

    n = len(grid)
    if n == 0 or any(not isinstance(r, (list, tuple)) or len(r) != n for r in grid):
        raise MatrixError("non-square grid")
    try:
        arr = np.array(grid, dtype=float)
    except (TypeError, ValueError):
        raise MatrixError("non-numeric entry") from None
    if rtt:
        arr = arr / 2.0
    return LatencyMatrix(arr, tuple(labels) if labels else None)


def dump_matrix(m: LatencyMatrix, format: str = "csv") -> str:
    if format == "json":
        return json.dumps(m.to_json(), sort_keys=True)
    if format != "csv":
        raise MatrixError(f"unknown matrix format {format!r}")
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    if m.labels is not None:
        w.writerow(m.labels)
    for row in m.delay:
        w.writerow([repr(float(x)) for x in row])
    return out.getvalue()


# -- time-varying traces -----------------------------------------------------


@dataclass(frozen=True)
class LatencyTrace:
    timestamps: tuple[int, ...]
    matrices: tuple[LatencyMatrix, ...]

    def __post_init__(self):
        ts = tuple(int(t) for t in self.timestamps)
        if len(ts) != len(self.matrices) or not ts:
            raise MatrixError("trace needs one matrix per timestamp")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise MatrixError("trace timestamps must be strictly increasing")
        if len({m.n for m in self.matrices}) != 1:
            raise MatrixError("trace matrices differ in size")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "matrices", tuple(self.matrices))

    @property
    def n(self) -> int:
        return self.matrices[0].n

    def at(self, t_ms: float) -> LatencyMatrix:
        """Matrix in effect at ``t_ms`` (latest sample not after it; clamped to the ends)."""
        idx = int(np.searchsorted(self.timestamps, t_ms, side="right")) - 1
        return self.matrices[max(idx, 0)]

    @classmethod
    def constant(cls, m: LatencyMatrix) -> LatencyTrace:
        return cls((0,), (m,))


def dump_trace(trace: LatencyTrace, header: dict | None = None) -> str:
    lines = []
    if header is not None:
        lines.append(json.dumps(header, sort_keys=True))
    for t, m in zip(trace.timestamps, trace.matrices):
        lines.append(json.dumps({"t_ms": t, "delay": m.delay.tolist()}))
    return "\n".join(lines) + "\n"


def load_trace(source: IO | bytes | str, *, rtt: bool = False) -> LatencyTrace:
    """Read trace JSONL. Lines without ``t_ms`` (e.g. a manifest header) are skipped."""
    ts, mats = [], []
    for lineno, line in enumerate(_read_text(source).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MatrixError(f"line {lineno}: invalid JSON: {exc}") from None
        if "t_ms" not in obj:
            continue
        arr = np.asarray(obj["delay"], dtype=float)
        mats.append(LatencyMatrix(arr / 2.0 if rtt else arr))
        ts.append(obj["t_ms"])
    return LatencyTrace(tuple(ts), tuple(mats))


# -- monotone cubic interpolation --------------------------------------------


class Pchip:
    """Monotone piecewise cubic Hermite interpolant (Fritsch-Carlson slopes).

    Queries outside the knot range are clamped to the end values.
    """

    def __init__(self, times: Sequence[float], values: Sequence[float]):
        x = np.asarray(times, dtype=float)
        y = np.asarray(values, dtype=float)
        if x.ndim != 1 or x.shape != y.shape:
            raise ValueError("times and values must be equal-length sequences")
        if len(x) < 2:
            raise ValueError("need at least 2 knots")
        if np.any(np.diff(x) <= 0):
            raise ValueError("knot times must be strictly increasing")
        self.x, self.y = x, y
        self.slopes = _fritsch_carlson_slopes(x, y)

    def __call__(self, t):
        t_arr = np.clip(np.asarray(t, dtype=float), self.x[0], self.x[-1])
        k = np.clip(np.searchsorted(self.x, t_arr, side="right") - 1, 0, len(self.x) - 2)
        x0, x1 = self.x[k], self.x[k + 1]
        h = x1 - x0
        s = (t_arr - x0) / h
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        out = (h00 * self.y[k] + h10 * h * self.slopes[k]
               + h01 * self.y[k + 1] + h11 * h * self.slopes[k + 1])
        # exact at knots, free of rounding in the basis
        out = np.where(s == 0.0, self.y[k], out)
        out = np.where(s == 1.0, self.y[k + 1], out)
        return float(out) if np.ndim(out) == 0 else out


def _fritsch_carlson_slopes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h = np.diff(x)
    secant = np.diff(y) / h
    m = np.empty_like(y)
    m[0], m[-1] = secant[0], secant[-1]
    for i in range(1, len(y) - 1):
        a, b = secant[i - 1], secant[i]
        m[i] = 0.0 if a * b <= 0 else (a + b) / 2.0
    for k, d in enumerate(secant):
        if d == 0.0:
            m[k] = m[k + 1] = 0.0
            continue
        alpha, beta = m[k] / d, m[k + 1] / d
        r = math.hypot(alpha, beta)  # no overflow for tiny secants
        if r > 3.0:
            tau = 3.0 / r
            m[k] = tau * alpha * d
            m[k + 1] = tau * beta * d
    return m


def pchip_fit(knots: Iterable[tuple[float, float]]) -> Pchip:
    pts = list(knots)
    if len(pts) < 2:
        raise ValueError("need at least 2 knots")
    times, values = zip(*pts)
    if any(v < 0 for v in values):
        raise ValueError("knot values must be non-negative")
    return Pchip(times, values)


def gen_trace(
    base: LatencyMatrix,
    knots_per_pair: int = DEFAULT_KNOTS,
    jitter_scale: float = 0.1,
    duration_ms: int = 10_000,
    step_ms: int = DEFAULT_STEP_MS,
    seed: int = 0,
) -> LatencyTrace:
    """Synthesize a smooth time-varying trace around ``base``.

    Each ordered pair gets ``knots_per_pair`` evenly spaced knots whose
    values are ``base * (1 +/- U(0, jitter_scale))``; the pair's curve is the
    monotone cubic through them, sampled every ``step_ms``.
    """
    if knots_per_pair < 2:
        raise ValueError("knots_per_pair must be >= 2")
    if not 0.0 <= jitter_scale <= 1.0:
        raise ValueError("jitter_scale must lie in [0, 1]")
    if step_ms <= 0 or duration_ms < 0:
        raise ValueError("step_ms must be positive and duration_ms non-negative")
    n = base.n
    samples = np.arange(0, duration_ms + 1, step_ms, dtype=float)
    knot_t = np.linspace(0.0, float(max(duration_ms, 1)), knots_per_pair)
    rng = rng_for(seed, 1)
    magnitude = rng.uniform(0.0, jitter_scale, size=(n, n, knots_per_pair))
    sign = rng.choice((-1.0, 1.0), size=(n, n, knots_per_pair))
    out = np.repeat(base.delay[None, :, :], len(samples), axis=0)
    if jitter_scale > 0:
        for i in range(n):
            for j in range(n):
                if i == j or base.delay[i, j] == 0:
                    continue
                vals = base.delay[i, j] * (1.0 + sign[i, j] * magnitude[i, j])
                out[:, i, j] = Pchip(knot_t, vals)(samples)
    mats = tuple(LatencyMatrix(out[s], base.labels) for s in range(len(samples)))
    return LatencyTrace(tuple(int(t) for t in samples), mats)


# -- triangle-inequality violations ------------------------------------------


@dataclass(frozen=True)
class Violation:
    src: int
    dst: int
    relay: int
    direct_ms: float
    relayed_ms: float

    def as_tuple(self) -> tuple:
        return (self.src, self.dst, self.relay, self.direct_ms, self.relayed_ms)


@dataclass(frozen=True)
class TivReport:
    violations: tuple[Violation, ...]
    violation_fraction: float
    n: int = field(default=0)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "violation_fraction": self.violation_fraction,
            "violations": [list(v.as_tuple()) for v in self.violations],
        }


def best_relays(delay: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """For every ordered pair, the cheapest single relay and its two-hop cost.

    Relays exclude both endpoints; ties go to the lowest relay index. Pairs
    with no admissible relay get cost ``inf`` and relay ``-1``.
    """
    n = delay.shape[0]
    two_hop = delay[:, :, None] + delay[None, :, :]  # [i, r, j]
    idx = np.arange(n)
    two_hop[idx, idx, :] = np.inf
    two_hop[:, idx, idx] = np.inf
    relay = np.argmin(two_hop, axis=1)
    cost = np.take_along_axis(two_hop, relay[:, None, :], axis=1)[:, 0, :]
    relay = np.where(np.isfinite(cost), relay, -1)
    return relay, cost


def tiv_scan(m: LatencyMatrix) -> TivReport:
    if m.n < 3:
        raise MatrixError("triangle scan needs at least 3 nodes")
    relay, cost = best_relays(m.delay)
    found = []
    for i in range(m.n):
        for j in range(m.n):
            if i != j and cost[i, j] < m.delay[i, j]:
                found.append(Violation(i, j, int(relay[i, j]), float(m.delay[i, j]), float(cost[i, j])))
    return TivReport(tuple(found), len(found) / (m.n * (m.n - 1)), m.n)


def relay_closure(m: LatencyMatrix) -> LatencyMatrix:
    """Replace each entry by the better of direct and best single-relay paths."""
    _, cost = best_relays(m.delay)
    return LatencyMatrix(np.minimum(m.delay, cost), m.labels)
