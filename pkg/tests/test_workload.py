import pytest
from hypothesis import given, strategies as st

from geosync.sync_filter import AggregatorState, Verdict, aggregate_and_filter, classify, dump_updates
from geosync.workload import WorkloadConfig, WorkloadGenerator, initial_state


def test_config_validation():
    with pytest.raises(ValueError):
        WorkloadConfig(conflict_ratio=1.5)
    with pytest.raises(ValueError):
        WorkloadConfig(conflict_ratio=0.6, dup_ratio=0.6)
    with pytest.raises(ValueError):
        WorkloadConfig(keyspace=1, keys_per_update=2)


def test_exact_planted_counts():
    gen = WorkloadGenerator(4, WorkloadConfig(updates_per_node=25, conflict_ratio=0.3, dup_ratio=0.1, null_ratio=0.05))
    batch, planted = gen.epoch(0)
    assert len(batch) == 100
    assert (planted.conflicting, planted.redundant, planted.null) == (30, 10, 5)
    assert planted.total_bytes == sum(u.size_bytes for u in batch)


def test_deterministic_per_seed():
    cfg = WorkloadConfig(conflict_ratio=0.2, dup_ratio=0.1, zipf_theta=0.8)
    a, b = WorkloadGenerator(5, cfg, 3), WorkloadGenerator(5, cfg, 3)
    for e in range(3):
        assert dump_updates(a.epoch(e)[0]) == dump_updates(b.epoch(e)[0])
    assert dump_updates(WorkloadGenerator(5, cfg, 4).epoch(0)[0]) != dump_updates(WorkloadGenerator(5, cfg, 3).epoch(0)[0])


def test_inactive_nodes_produce_nothing():
    batch, _ = WorkloadGenerator(4).epoch(0, active={0, 2})
    assert {u.origin for u in batch} == {0, 2}


@given(st.floats(0, 0.5), st.floats(0, 0.3), st.floats(0, 0.2), st.integers(0, 50))
def test_filter_recovers_exactly_the_planted_white_data(conflict, dup, null, seed):
    cfg = WorkloadConfig(updates_per_node=10, conflict_ratio=conflict, dup_ratio=dup, null_ratio=null)
    gen = WorkloadGenerator(3, cfg, seed)
    truth = dict(gen.truth)
    for e in range(2):
        batch, planted = gen.epoch(e)
        state = AggregatorState(e, truth)
        kept, stats = aggregate_and_filter(batch, state)
        assert stats.conflicting == planted.conflicting
        assert stats.redundant == planted.redundant
        assert stats.null == planted.null
        assert stats.bytes_in - stats.bytes_out == planted.white_bytes
        truth = dict(gen.truth)


def test_versions_are_unique_and_honest_reads_validate():
    gen = WorkloadGenerator(4, WorkloadConfig(updates_per_node=20, keyspace=30))
    seen = set()
    base = {k: e.version for k, e in initial_state(30).items()}
    for e in range(3):
        batch, _ = gen.epoch(e)
        for u in batch:
            for key, (v, _) in u.write_set.items():
                assert v not in seen
                seen.add(v)
            assert classify(u, AggregatorState(e, base)) is Verdict.LIVE
        base = dict(gen.truth)


def test_duplicates_follow_their_original():
    gen = WorkloadGenerator(2, WorkloadConfig(updates_per_node=10, dup_ratio=0.3), 1)
    batch, planted = gen.epoch(0)
    first = {}
    for idx, u in enumerate(batch):
        if u.content_hash in first:
            assert batch[first[u.content_hash]].origin == u.origin
        else:
            first[u.content_hash] = idx
    assert len(batch) - len(first) == planted.redundant == 6
