import numpy as np
import pytest
from hypothesis import given, strategies as st

from geosync.coords import CoordConfig, CoordSystem, NetCoordinate, converge, estimate, relative_errors
from geosync.topology import LatencyMatrix


def test_estimate_examples():
    assert estimate(NetCoordinate(np.zeros(3)), NetCoordinate(np.array([10.0, 0, 0]))) == 10
    assert estimate(NetCoordinate(np.zeros(3), 2), NetCoordinate(np.zeros(3), 3)) == 5
    assert estimate(NetCoordinate(np.array([3.0, 4, 0]), 1), NetCoordinate(np.zeros(3), 1)) == 7


def test_estimate_dimension_mismatch():
    with pytest.raises(ValueError):
        estimate(NetCoordinate(np.zeros(2)), NetCoordinate(np.zeros(3)))


def _pair(dim=2, cc=0.5):
    cs = CoordSystem(2, CoordConfig(dim=dim, cc=cc))
    cs.coords[1].position = np.array([10.0] + [0.0] * (dim - 1))
    return cs


def test_update_step_by_hand():
    # equal errors -> w = 0.5; step = 0.5 * 0.5 * (20 - 10) along (-1, 0)
    cs = _pair()
    cs.update(0, 1, 20.0)
    np.testing.assert_allclose(cs.coords[0].position, [-2.5, 0.0])
    assert cs.coords[0].height == 0


def test_exact_sample_does_not_move():
    cs = _pair()
    before = cs.coords[0].position.copy()
    err = cs.coords[0].error
    cs.update(0, 1, 10.0)
    np.testing.assert_array_equal(cs.coords[0].position, before)
    assert cs.coords[0].error < err


def test_coincident_nodes_separate():
    cs = CoordSystem(2, CoordConfig(dim=3, cc=0.25), seed=9)
    cs.update(0, 1, 10.0)
    assert np.linalg.norm(cs.coords[0].position) == pytest.approx(0.25 * 0.5 * 10)
    other = CoordSystem(2, CoordConfig(dim=3, cc=0.25), seed=9)
    other.update(0, 1, 10.0)
    np.testing.assert_array_equal(other.coords[0].position, cs.coords[0].position)


def test_zero_rtt_is_skipped():
    cs = _pair()
    assert cs.update(0, 1, 0.0) is False
    assert cs.coords[0].position[0] == 0.0


@given(st.floats(0.1, 1000), st.floats(0.1, 1000))
def test_error_stays_bounded(rtt, start):
    cs = CoordSystem(2, CoordConfig(dim=2))
    cs.coords[1].position = np.array([start, 0.0])
    for _ in range(5):
        cs.update(0, 1, rtt)
        cs.update(1, 0, rtt)
    for c in cs.coords:
        assert 0 < c.error <= 1
        assert c.height >= 0


def test_estimated_matrix_shapes():
    assert CoordSystem(1).estimated_matrix().n == 1
    cs = _pair(dim=3)
    m = cs.estimated_matrix()
    assert m[0, 1] == m[1, 0] == 10


def test_converges_on_euclidean_8_nodes():
    rng = np.random.default_rng(21)
    pts = rng.uniform(0, 100, (8, 2))
    truth = LatencyMatrix(np.linalg.norm(pts[:, None] - pts[None], axis=-1))
    system, history = converge(truth, rounds=100, seed=3)
    assert np.median(relative_errors(system.estimated_matrix(), truth)) <= 0.18
    assert history[-1] <= history[0]


def test_converge_stops_at_target():
    rng = np.random.default_rng(2)
    pts = rng.uniform(0, 100, (6, 2))
    truth = LatencyMatrix(np.linalg.norm(pts[:, None] - pts[None], axis=-1))
    _, history = converge(truth, rounds=100, target=0.5, seed=0)
    assert history[-1] <= 0.5 and len(history) < 100


def test_calibrate_empty_and_exact():
    cs = _pair()
    before = [c.position.copy() for c in cs.coords]
    rep = cs.calibrate([])
    assert rep.samples == 0 and rep.exceeded == [] and rep.skipped == []
    rep = cs.calibrate([(0, 1, 10.0), (1, 0, 10.0)])
    assert rep.exceeded == []
    for c, b in zip(cs.coords, before):
        np.testing.assert_array_equal(c.position, b)


def test_calibration_shrinks_on_grid():
    grid = np.array([(i % 4, i // 4) for i in range(16)], dtype=float) * 30.0
    d = np.linalg.norm(grid[:, None] - grid[None], axis=-1)
    samples = [(i, j, d[i, j]) for i in range(16) for j in range(16) if i != j]
    monotone = 0
    for seed in range(20):
        cs = CoordSystem(16, seed=seed)
        counts = [len(cs.calibrate(samples, 0.1).exceeded) for _ in range(10)]
        monotone += all(b <= a for a, b in zip(counts, counts[1:]))
    assert monotone >= 18
