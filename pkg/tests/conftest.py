import numpy as np
import pytest
from hypothesis import settings

from geosync.topology import LatencyMatrix

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# intra 5; cross pairs 100 / 250 / 280 / 300
CLUSTERED4 = np.array([
    [0, 5, 100, 250],
    [5, 0, 280, 300],
    [100, 280, 0, 5],
    [250, 300, 5, 0],
], dtype=float)

# A=0, B=1, C=2: A->C direct 100, A->B 30, B->C 50
TRIANGLE = np.array([
    [0, 30, 100],
    [30, 0, 50],
    [100, 50, 0],
], dtype=float)


@pytest.fixture
def clustered4() -> LatencyMatrix:
    return LatencyMatrix(CLUSTERED4.copy())


@pytest.fixture
def triangle() -> LatencyMatrix:
    return LatencyMatrix(TRIANGLE.copy())


def random_matrix(rng: np.random.Generator, n: int, lo: float = 1.0, hi: float = 100.0) -> LatencyMatrix:
    d = rng.uniform(lo, hi, size=(n, n))
    np.fill_diagonal(d, 0.0)
    return LatencyMatrix(d)


def metric_matrix(rng: np.random.Generator, n: int, dim: int = 2) -> LatencyMatrix:
    pts = rng.uniform(0.0, 100.0, size=(n, dim))
    return LatencyMatrix(np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1))


def shortest_path_closure(d: np.ndarray) -> np.ndarray:
    d = d.copy()
    for r in range(d.shape[0]):
        d = np.minimum(d, d[:, r:r + 1] + d[r:r + 1, :])
    return d


def two_cluster(rng: np.random.Generator, n: int) -> tuple[LatencyMatrix, np.ndarray]:
    """Symmetric two-cluster matrix: intra U[1,10], cross U[100,300]; sides of at least 2 nodes."""
    a = int(rng.integers(2, n - 1))
    side = np.array([0] * a + [1] * (n - a))
    rng.shuffle(side)
    upper = np.where(side[:, None] == side[None, :], rng.uniform(1, 10, (n, n)), rng.uniform(100, 300, (n, n)))
    d = np.triu(upper, 1)
    d = d + d.T
    return LatencyMatrix(d), side


# (number, title, passed, detail), filled by the acceptance suite
ACCEPTANCE: list[tuple[int, str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {title}: {detail}")
