"""Vivaldi network coordinates for estimating large latency matrices."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from geosync._rng import rng_for
from geosync.topology import LatencyMatrix

MIN_ERROR = 1e-6


@dataclass
class NetCoordinate:
    position: np.ndarray
    height: float = 0.0
    error: float = 1.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        if self.height < 0:
            raise ValueError("height must be non-negative")
        if not 0.0 < self.error <= 1.0:
            raise ValueError("error estimate must lie in (0, 1]")

    def to_json(self) -> dict:
        return {"position": self.position.tolist(), "height": self.height, "error": self.error}


def estimate(a: NetCoordinate, b: NetCoordinate) -> float:
    """Predicted latency: Euclidean distance plus both heights."""
    if a.position.shape != b.position.shape:
        raise ValueError(f"dimension mismatch: {a.position.shape} vs {b.position.shape}")
    return float(np.linalg.norm(a.position - b.position)) + a.height + b.height


@dataclass(frozen=True)
class CoordConfig:
    dim: int = 3
    cc: float = 0.25
    ce: float = 0.25
    initial_error: float = 1.0


@dataclass
class CalibrationReport:
    samples: int
    skipped: list[tuple[int, int]] = field(default_factory=list)
    exceeded: list[tuple[int, int, float]] = field(default_factory=list)


class CoordSystem:
    """One coordinate per node plus the adaptive-timestep Vivaldi update.

    Coordinates start at the origin; the first updates separate nodes along
    seeded random directions.
    """

    def __init__(self, n: int, config: CoordConfig | None = None, seed: int = 0):
        if n < 1:
            raise ValueError("need at least one node")
        self.config = config or CoordConfig()
        self.coords = [
            NetCoordinate(np.zeros(self.config.dim), 0.0, self.config.initial_error) for _ in range(n)
        ]
        self._rng = rng_for(seed, 4)

    @property
    def n(self) -> int:
        return len(self.coords)

    def estimate(self, i: int, j: int) -> float:
        return estimate(self.coords[i], self.coords[j])

    def _random_unit(self) -> np.ndarray:
        v = self._rng.normal(size=self.config.dim)
        return v / np.linalg.norm(v)

    def update(self, i: int, j: int, rtt: float) -> bool:
        """Move node ``i`` toward agreement with a measured ``rtt`` to ``j``.

        Returns False (and changes nothing) for a zero sample between
        distinct nodes, which carries no usable direction or scale.
        """
        if i == j:
            raise ValueError("cannot update a node against itself")
        if rtt < 0:
            raise ValueError("rtt sample must be non-negative")
        if rtt == 0:
            return False
        a, b = self.coords[i], self.coords[j]
        est = estimate(a, b)
        w = a.error / (a.error + b.error)
        rel_err = abs(est - rtt) / rtt
        a.error = min(1.0, max(MIN_ERROR, rel_err * self.config.ce * w + a.error * (1 - self.config.ce * w)))
        force = self.config.cc * w * (rtt - est)
        if force == 0.0:
            return True
        diff = a.position - b.position
        dist = float(np.linalg.norm(diff))
        if dist == 0.0:
            # coincident positions: push along a random direction, heights untouched
            a.position = a.position + force * self._random_unit()
            return True
        # unit vector in height-augmented space, norm = dist + heights = est
        a.position = a.position + force * diff / est
        a.height = max(0.0, a.height + force * (a.height + b.height) / est)
        if not (np.all(np.isfinite(a.position)) and math.isfinite(a.height)):
            raise FloatingPointError("coordinate update produced a non-finite value")
        return True

    def full_round(self, rtt: np.ndarray) -> None:
        """One update per ordered pair, in row-major order."""
        for i in range(self.n):
            for j in range(self.n):
                if i != j:
                    self.update(i, j, float(rtt[i, j]))

    def estimated_matrix(self, *, one_way: bool = False) -> LatencyMatrix:
        """Symmetric matrix of pairwise estimates, halved when ``one_way``."""
        pos = np.array([c.position for c in self.coords])
        h = np.array([c.height for c in self.coords])
        d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1) + h[:, None] + h[None, :]
        np.fill_diagonal(d, 0.0)
        return LatencyMatrix(d / 2.0 if one_way else d)

    def calibrate(self, samples, tolerance: float = 0.1) -> CalibrationReport:
        """Replay measured samples, then list pairs still off by more than ``tolerance``."""
        samples = list(samples)
        report = CalibrationReport(samples=len(samples))
        for i, j, measured in samples:
            if not self.update(i, j, measured):
                report.skipped.append((i, j))
        for i, j, measured in samples:
            if measured <= 0:
                continue
            err = abs(self.estimate(i, j) - measured) / measured
            if err > tolerance:
                report.exceeded.append((i, j, err))
        return report

    def to_json(self) -> list[dict]:
        return [c.to_json() for c in self.coords]


def relative_errors(est: LatencyMatrix, truth: LatencyMatrix) -> np.ndarray:
    """Relative error over off-diagonal pairs with positive ground truth."""
    mask = ~np.eye(truth.n, dtype=bool) & (truth.delay > 0)
    return np.abs(est.delay[mask] - truth.delay[mask]) / truth.delay[mask]


def converge(truth: LatencyMatrix, rounds: int = 100, target: float | None = None,
             seed: int = 0, config: CoordConfig | None = None) -> tuple[CoordSystem, list[float]]:
    """Run full-pair rounds against ``truth``; stop early once the median error reaches ``target``."""
    system = CoordSystem(truth.n, config, seed)
    history = []
    for _ in range(rounds):
        system.full_round(truth.delay)
        med = float(np.median(relative_errors(system.estimated_matrix(), truth)))
        history.append(med)
        if target is not None and med <= target:
            break
    return system, history
