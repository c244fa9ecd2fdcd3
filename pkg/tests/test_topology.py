import io
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.interpolate import PchipInterpolator

from geosync.topology import (
    LatencyMatrix, LatencyTrace, MatrixError, Pchip, best_relays, dump_matrix, dump_trace, gen_trace,
    load_matrix, load_trace, pchip_fit, relay_closure, tiv_scan,
)

from conftest import metric_matrix, random_matrix


def test_load_csv_keeps_asymmetry():
    m = load_matrix("0,10\n12,0\n")
    assert m[0, 1] == 10 and m[1, 0] == 12


def test_load_rejects_nonzero_diagonal():
    with pytest.raises(MatrixError, match="diagonal"):
        load_matrix("0,1,2\n1,5,1\n2,1,0\n")


def test_one_by_one():
    assert load_matrix("0\n").n == 1


@pytest.mark.parametrize("text", ["0,1\n1\n", "0,-1\n1,0\n", "0,nan\n1,0\n", "", "0,x\n1,0\n"])
def test_load_rejects_malformed(text):
    with pytest.raises(MatrixError):
        load_matrix(text)


def test_csv_header_labels():
    m = load_matrix("a,b\n0,4\n6,0\n")
    assert m.labels == ("a", "b")
    assert m[1, 0] == 6


def test_rtt_halves():
    assert load_matrix("0,10\n12,0\n", rtt=True)[1, 0] == 6


def test_json_round_trip():
    rng = np.random.default_rng(3)
    m = random_matrix(rng, 5)
    assert load_matrix(dump_matrix(m, "json"), "json") == m
    assert load_matrix(dump_matrix(m, "csv")) == m


def test_matrix_is_read_only():
    m = load_matrix("0,10\n12,0\n")
    with pytest.raises(ValueError):
        m.delay[0, 1] = 3


def test_trace_at_picks_latest_sample():
    a, b = LatencyMatrix(np.array([[0, 1.0], [1, 0]])), LatencyMatrix(np.array([[0, 2.0], [2, 0]]))
    tr = LatencyTrace((0, 100), (a, b))
    assert tr.at(-5) == a and tr.at(99) == a and tr.at(100) == b and tr.at(1e9) == b


def test_trace_rejects_bad_timestamps():
    a = LatencyMatrix(np.zeros((2, 2)))
    with pytest.raises(MatrixError):
        LatencyTrace((5, 5), (a, a))


def test_trace_jsonl_round_trip_skips_header():
    base = LatencyMatrix(np.array([[0, 100.0, 50], [90, 0, 40], [55, 45, 0]]))
    tr = gen_trace(base, duration_ms=1000, step_ms=250, seed=2)
    text = dump_trace(tr, {"manifest": {"command": "x"}})
    back = load_trace(io.StringIO(text))
    assert back.timestamps == tr.timestamps
    assert all(x == y for x, y in zip(back.matrices, tr.matrices))
    assert json.loads(text.splitlines()[0]) == {"manifest": {"command": "x"}}


# -- monotone interpolation ---------------------------------------------------


def test_pchip_flat_segment_is_constant():
    f = pchip_fit([(0, 100), (10, 100), (20, 200)])
    assert f(5) == 100
    assert f(10) == 100


def test_pchip_two_knots_bracketed():
    f = pchip_fit([(0, 100), (20, 200)])
    dense = f(np.linspace(0, 20, 2001))
    assert 100 <= f(10) <= 200
    assert np.all(np.diff(dense) >= 0)


def test_pchip_clamps_outside_range():
    f = pchip_fit([(0, 1), (1, 3), (2, 2)])
    assert f(-1) == 1 and f(5) == 2


def _reference_slopes(x, y):
    # plain-loop Fritsch-Carlson: averaged secants, zero at extrema and on flats, circle limiter
    n = len(x)
    d = [(y[i + 1] - y[i]) / (x[i + 1] - x[i]) for i in range(n - 1)]
    m = [d[0]] + [0.0 if d[i - 1] * d[i] <= 0 else 0.5 * (d[i - 1] + d[i]) for i in range(1, n - 1)] + [d[-1]]
    for i in range(n - 1):
        if d[i] == 0:
            m[i] = m[i + 1] = 0.0
            continue
        a, b = m[i] / d[i], m[i + 1] / d[i]
        if a * a + b * b > 9:
            t = 3 / (a * a + b * b) ** 0.5
            m[i], m[i + 1] = t * a * d[i], t * b * d[i]
    return m


def _reference_eval(x, y, m, t):
    for i in range(len(x) - 1):
        if x[i] <= t <= x[i + 1]:
            h = x[i + 1] - x[i]
            s = (t - x[i]) / h
            return ((2 * s**3 - 3 * s**2 + 1) * y[i] + (s**3 - 2 * s**2 + s) * h * m[i]
                    + (-2 * s**3 + 3 * s**2) * y[i + 1] + (s**3 - s**2) * h * m[i + 1])
    raise AssertionError


knot_lists = st.lists(st.floats(0, 500, allow_nan=False), min_size=2, max_size=10)


@given(knot_lists)
def test_pchip_matches_reference_loop(values):
    x = [10.0 * i for i in range(len(values))]
    f = Pchip(x, values)
    m = _reference_slopes(x, values)
    for t in np.linspace(0, x[-1], 37):
        assert f(t) == pytest.approx(_reference_eval(x, values, m, t), abs=1e-9, rel=1e-9)


@given(knot_lists)
def test_pchip_exact_at_knots_and_locally_monotone(values):
    x = np.arange(len(values), dtype=float) * 7.0
    f = Pchip(x, values)
    assert list(f(x)) == list(values)
    for i in range(len(values) - 1):
        seg = f(np.linspace(x[i], x[i + 1], 50))
        lo, hi = min(values[i], values[i + 1]), max(values[i], values[i + 1])
        assert np.all(seg >= lo - 1e-9) and np.all(seg <= hi + 1e-9)
        steps = np.diff(seg)
        assert np.all(steps >= -1e-9) or np.all(steps <= 1e-9)


@given(st.lists(st.floats(0, 500, allow_nan=False), min_size=3, max_size=10, unique=True))
def test_pchip_agrees_with_scipy_on_monotone_direction(values):
    # scipy uses different slope weights, so compare shape rather than values
    x = np.arange(len(values), dtype=float)
    ours, theirs = Pchip(x, values), PchipInterpolator(x, values)
    for i in range(len(values) - 1):
        t = np.linspace(x[i], x[i + 1], 20)
        assert np.sign(ours(t[-1]) - ours(t[0])) == np.sign(theirs(t[-1]) - theirs(t[0]))
        assert np.all(np.sign(np.diff(ours(t))) * np.sign(values[i + 1] - values[i]) >= 0)


def test_pchip_equals_scipy_on_linear_data():
    x = np.array([0.0, 3.0, 5.0, 9.0])
    y = 2.0 * x + 1.0
    t = np.linspace(0, 9, 91)
    np.testing.assert_allclose(Pchip(x, y)(t), PchipInterpolator(x, y)(t), atol=1e-12)


# -- trace synthesis ----------------------------------------------------------


def test_zero_jitter_is_identity():
    base = LatencyMatrix(np.array([[0, 100.0], [80, 0]]))
    tr = gen_trace(base, jitter_scale=0.0, duration_ms=1000, step_ms=100)
    assert all(m == base for m in tr.matrices)


def test_same_seed_same_trace():
    base = LatencyMatrix(np.array([[0, 100.0, 30], [80, 0, 20], [10, 60, 0]]))
    a = dump_trace(gen_trace(base, seed=5, duration_ms=2000))
    b = dump_trace(gen_trace(base, seed=5, duration_ms=2000))
    assert a == b
    assert a != dump_trace(gen_trace(base, seed=6, duration_ms=2000))


def test_jitter_stays_in_band():
    base = LatencyMatrix(np.array([[0, 100.0], [100, 0]]))
    tr = gen_trace(base, jitter_scale=0.2, duration_ms=10_000, step_ms=10, seed=11)
    vals = np.array([m[0, 1] for m in tr.matrices])
    assert len(vals) == 1001
    assert vals.min() >= 80 and vals.max() <= 120
    assert vals.std() > 0


# -- triangle violations ------------------------------------------------------


def test_triangle_violation(triangle):
    rep = tiv_scan(triangle)
    assert (0, 2, 1, 100.0, 80.0) in [v.as_tuple() for v in rep.violations]
    assert (2, 0, 1, 100.0, 80.0) in [v.as_tuple() for v in rep.violations]
    assert rep.violation_fraction == pytest.approx(2 / 6)


def test_single_violation_exact():
    d = np.array([[0, 30, 100], [30, 0, 40], [70, 40, 0]], dtype=float)
    rep = tiv_scan(LatencyMatrix(d))
    assert [v.as_tuple() for v in rep.violations] == [(0, 2, 1, 100.0, 70.0)]


def test_metric_matrix_has_no_violations():
    rep = tiv_scan(metric_matrix(np.random.default_rng(0), 9))
    assert rep.violations == () and rep.violation_fraction == 0


def test_tiv_needs_three_nodes():
    with pytest.raises(MatrixError):
        tiv_scan(LatencyMatrix(np.array([[0, 1.0], [1, 0]])))


@given(st.integers(3, 8), st.integers(0, 10_000))
def test_best_relays_match_triple_scan(n, seed):
    d = random_matrix(np.random.default_rng(seed), n).delay
    relay, cost = best_relays(d)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            options = [(d[i, r] + d[r, j], r) for r in range(n) if r not in (i, j)]
            best = min(options)
            assert cost[i, j] == best[0] and relay[i, j] == best[1]


def test_relay_closure_never_increases():
    m = random_matrix(np.random.default_rng(4), 7)
    c = relay_closure(m)
    assert np.all(c.delay <= m.delay)
    assert tiv_scan(c).violation_fraction <= tiv_scan(m).violation_fraction
