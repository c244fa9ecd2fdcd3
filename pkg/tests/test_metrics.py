import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from geosync.metrics import Cdf, comm_heatmap, compare, percentile, summarize
from geosync.planner import PlannerConfig
from geosync.simulator import SimConfig, run_simulation
from geosync.topology import LatencyTrace
from geosync.workload import WorkloadConfig

SMALL = WorkloadConfig(updates_per_node=3, keyspace=200, payload_bytes=100)


def test_percentile_examples():
    assert percentile([10, 20, 30, 40], 0.5) == 20
    assert percentile([10, 20, 30, 40], 1.0) == 40
    assert percentile([7], 0.01) == 7
    assert percentile([40, 10, 30, 20], 0.9) == 40
    with pytest.raises(ValueError):
        percentile([], 0.5)
    with pytest.raises(ValueError):
        percentile([1], 0)


def test_percentile_no_float_drift():
    # 0.7 * 10 is 7.000000000000001 in binary floating point
    assert percentile(list(range(1, 11)), 0.7) == 7


@given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=50))
def test_cdf_is_distribution(samples):
    cdf = Cdf.from_samples(samples)
    assert list(cdf.values) == sorted(cdf.values)
    assert cdf.fractions[-1] == 1.0
    assert all(a <= b for a, b in zip(cdf.fractions, cdf.fractions[1:]))
    assert cdf.at(max(samples)) == 1.0
    assert cdf.at(min(samples) - 1) == 0.0


def test_cdf_rejects_bad_input():
    with pytest.raises(ValueError):
        Cdf((2.0, 1.0), (0.5, 1.0))
    with pytest.raises(ValueError):
        Cdf((1.0, 2.0), (0.5, 0.9))


def test_cdf_csv():
    text = Cdf.from_samples([3, 1]).to_csv("# h\n")
    assert text.splitlines() == ["# h", "value,cum_fraction", "1.0,0.5", "3.0,1.0"]


def test_summarize_keys():
    s = summarize([1, 2, 3, 4])
    assert s["p50"] == 2 and s["p90"] == 4 and s["p99"] == 4 and s["mean"] == 2.5


def _run(m, mode="grouped", workload=SMALL, **kw):
    return run_simulation(LatencyTrace.constant(m), SimConfig(rounds=5, mode=mode, workload=workload, **kw))


def test_heatmap_baseline_uniform(clustered4):
    h = comm_heatmap(_run(clustered4, "baseline"))
    off = h[~np.eye(4, dtype=bool)]
    assert np.all(off == 1.0) and np.all(np.diag(h) == 0)


def test_heatmap_grouped_structure(clustered4):
    rep = _run(clustered4)
    h = comm_heatmap(rep)
    allowed = {(0, 1), (1, 0), (2, 3), (3, 2), (0, 2), (2, 0)}
    assert {(i, j) for i in range(4) for j in range(4) if h[i, j] > 0} == allowed


def test_heatmap_ignores_payload(clustered4):
    a = comm_heatmap(_run(clustered4))
    b = comm_heatmap(_run(clustered4, workload=WorkloadConfig(updates_per_node=0)))
    np.testing.assert_array_equal(a, b)


def test_heatmap_scale_free(clustered4):
    rep = _run(clustered4).to_json()
    doubled = json.loads(json.dumps(rep))
    for r in doubled["rounds"]:
        r["link_msgs"] = [[i, j, 2 * c] for i, j, c in r["link_msgs"]]
    np.testing.assert_array_equal(comm_heatmap(rep), comm_heatmap(doubled))


def test_compare_identical_is_zero(clustered4):
    rep = _run(clustered4)
    c = compare(rep, rep)
    assert all(v == 0 for v in c.makespan_delta_ms.values())
    assert c.bytes_reduction == c.msgs_reduction == c.inter_bytes_reduction == 0


def test_compare_clustered_reduction(clustered4):
    c = compare(_run(clustered4), _run(clustered4, "baseline"))
    assert c.per_round_reduction_mean == pytest.approx((300 - 110) / 300)
    assert c.makespan_delta_ms["p90"] == 190
    assert c.msgs_reduction == pytest.approx(1 - 12 / 24)


def test_compare_filtering_thirty_percent(clustered4):
    wl = WorkloadConfig(updates_per_node=10, conflict_ratio=0.3, payload_bytes=100)
    filtered = _run(clustered4, workload=wl, planner=PlannerConfig(k=2))
    unfiltered = _run(clustered4, workload=wl, planner=PlannerConfig(k=2), filtering=False)
    assert compare(filtered, unfiltered).inter_bytes_reduction == pytest.approx(0.30, abs=0.02)


def test_compare_shape_mismatch(clustered4):
    with pytest.raises(ValueError):
        compare(_run(clustered4), run_simulation(LatencyTrace.constant(clustered4), SimConfig(rounds=3)))
