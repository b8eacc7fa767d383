import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from cnalock import FairnessPolicy
from cnalock.sim import (
    BoundExceededError,
    MutualExclusionError,
    ScheduleError,
    SimConfig,
    SimError,
    Simulation,
    arrival_timeline,
    consecutive_pairs,
    enumerate_schedules,
    fairness_factor,
    format_schedule,
    intra_socket_handover_ratio,
    oracle_grant_order,
    parse_schedule,
    run_random,
    run_schedule,
    saturated_contention,
)

ALL_KINDS = ["cna", "cna-opt", "mcs", "tas", "ticket", "word-mcs", "word-cna"]


# -- running ----------------------------------------------------------------------


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_solo_trace(kind):
    trace = run_random(SimConfig(sockets=(0,), lock=kind))
    assert [e.event for e in trace.public_events] == ["enqueue", "grant", "release"]
    assert trace.complete and trace.counter == 1


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_random_runs_complete(kind):
    for seed in range(10):
        trace = run_random(SimConfig(sockets=(0, 1, 0, 1), acquisitions=3, lock=kind), seed)
        assert trace.counter == 12
        assert sorted(trace.grant_order) == sorted(list(range(4)) * 3)


def test_grants_and_releases_alternate_per_thread():
    trace = run_random(SimConfig(sockets=(0, 1, 1, 0), acquisitions=3, lock="cna"), 9)
    for t in range(4):
        kinds = [e.event for e in trace.events if e.thread == t and e.event in ("grant", "release")]
        assert kinds == ["grant", "release"] * 3


@pytest.mark.parametrize("kind", ["cna", "mcs", "word-cna"])
def test_replay_is_byte_identical(kind):
    config = SimConfig(sockets=(0, 1, 0), acquisitions=2, lock=kind)
    a = run_random(config, 17)
    b = run_random(config, 17)
    c = run_schedule(config, a.schedule)
    assert a.to_jsonl() == b.to_jsonl() == c.to_jsonl()


def test_schedule_file_round_trip(tmp_path):
    config = SimConfig(sockets=(0, 1, 1), acquisitions=2)
    trace = run_random(config, 4)
    path = tmp_path / "sched.txt"
    path.write_text(format_schedule(trace.schedule))
    assert run_schedule(config, parse_schedule(path.read_text())).to_jsonl() == trace.to_jsonl()


def test_jsonl_records():
    trace = run_random(SimConfig(sockets=(0, 1), acquisitions=1), 0)
    recs = [json.loads(line) for line in trace.to_jsonl(public_only=True).splitlines()]
    assert all({"step", "thread", "event", "socket"} <= set(r) for r in recs)
    assert [r["step"] for r in recs] == sorted(r["step"] for r in recs)


def test_run_schedule_rejects_blocked_thread():
    config = SimConfig(sockets=(0, 0), lock="mcs")
    sim = Simulation(config)
    sim.run_until(0, "grant")
    sim.run_until(1, "link")
    with pytest.raises(ScheduleError):
        sim.step(1)


def test_run_schedule_rejects_overlong_schedule():
    with pytest.raises(ScheduleError):
        run_schedule(SimConfig(sockets=(0,), lock="tas"), [0] * 50)


def test_broken_lock_is_caught():
    sim = Simulation(SimConfig(sockets=(0, 0), lock="tas"))
    sim.lock.acquire_steps = lambda ctx=None: iter(())
    sim.step(0)
    with pytest.raises(MutualExclusionError):
        sim.step(1)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(sockets=(0, 1, 0, 1), mode="exhaustive")
    with pytest.raises(ValueError):
        SimConfig(sockets=(0,), mode="exhaustive", depth_bound=65)
    with pytest.raises(ValueError):
        SimConfig(sockets=(0, -1))
    with pytest.raises(ValueError):
        SimConfig(sockets=(0, 1), acquisitions=(1,))


def test_depth_bound_enforced():
    config = SimConfig(sockets=(0, 1, 0), acquisitions=(2, 2, 2), mode="exhaustive", depth_bound=12)
    with pytest.raises(BoundExceededError):
        next(iter(enumerate_schedules(config)))


# -- exhaustive enumeration --------------------------------------------------------


@pytest.mark.parametrize("kind", ["mcs", "cna"])
def test_two_threads_every_trace_grants_both(kind):
    traces = list(enumerate_schedules(SimConfig(sockets=(0, 1), lock=kind, mode="exhaustive")))
    assert len(traces) > 1
    assert len({tuple(t.schedule) for t in traces}) == len(traces)
    assert all(sorted(t.grant_order) == [0, 1] for t in traces)


def test_three_threads_same_socket_preferred():
    # sockets {0, 1, 0}: whenever both others wait behind a socket-0 holder at
    # its first release, the other socket-0 thread goes first
    config = SimConfig(sockets=(0, 1, 0), lock="cna", draws=(1,), mode="exhaustive")
    checked = 0
    for trace in enumerate_schedules(config):
        first = trace.grant_order[0]
        arrivals = {t: after for t, _, after in arrival_timeline(trace)}
        if first != 1 and all(arrivals[t] == 0 for t in (0, 1, 2) if t != first):
            checked += 1
            assert trace.grant_order == [first, 2 - first, 1]
    assert checked > 0


# -- oracle -------------------------------------------------------------------------


def test_oracle_same_socket_is_fifo():
    arrivals = [(t, 0) for t in (3, 1, 4, 0, 2)]
    assert oracle_grant_order(arrivals) == [3, 1, 4, 0, 2]


def test_oracle_seven_thread_walkthrough():
    arrivals = [(1, 0), (2, 1), (3, 1), (4, 0), (5, 0), (6, 1), (1, 0, 2), (7, 1, 2)]
    assert oracle_grant_order(arrivals, draws=None) == [1, 4, 5, 1, 2, 3, 6, 7]


def test_oracle_fifo_flag_and_flush_draw():
    arrivals = [(0, 0), (1, 1), (2, 0)]
    assert oracle_grant_order(arrivals, fifo=True) == [0, 1, 2]
    assert oracle_grant_order(arrivals, draws=(1,)) == [0, 2, 1]
    # a zero draw at the first release means no search at all
    assert oracle_grant_order(arrivals, draws=(0,)) == [0, 1, 2]


def test_oracle_rejects_bad_input():
    with pytest.raises(ValueError):
        oracle_grant_order([])
    with pytest.raises(ValueError):
        oracle_grant_order([(0, 0), (0, 1, 1)])


DRAW_SCRIPTS = [(1,), (1, 0), (0,), (1, 1, 0), (0x100, 1), (1, 0x100, 0)]


@settings(max_examples=60, deadline=None)
@given(
    sockets=st.lists(st.integers(0, 1), min_size=2, max_size=10),
    seed=st.integers(0, 2**16),
    script=st.sampled_from(DRAW_SCRIPTS),
    kind=st.sampled_from(["cna", "cna-opt"]),
)
def test_stepped_cna_matches_oracle(sockets, seed, script, kind):
    acq = tuple(random.Random(seed).choice((1, 2)) for _ in sockets)
    config = SimConfig(sockets=tuple(sockets), acquisitions=acq, lock=kind, draws=script)
    trace = run_random(config, seed)
    policy = FairnessPolicy(shuffle_reduction_enabled=(kind == "cna-opt"))
    assert trace.grant_order == oracle_grant_order(arrival_timeline(trace), draws=script, policy=policy)


@settings(max_examples=30, deadline=None)
@given(sockets=st.lists(st.integers(0, 2), min_size=2, max_size=8), seed=st.integers(0, 2**16))
def test_stepped_mcs_matches_fifo_oracle(sockets, seed):
    config = SimConfig(sockets=tuple(sockets), acquisitions=2, lock="mcs")
    trace = run_random(config, seed)
    assert trace.grant_order == oracle_grant_order(arrival_timeline(trace), fifo=True)


def test_arrival_timeline_requires_links():
    sim = Simulation(SimConfig(sockets=(0, 0), lock="mcs"))
    sim.run_until(0, "enqueue")
    sim.run_until(1, "enqueue")
    with pytest.raises(SimError):
        arrival_timeline(sim.trace)


# -- fairness properties of the protocol ---------------------------------------------


def test_threshold_zero_bounds_waiting():
    n = 6
    config = SimConfig(sockets=(0, 1) * 3, acquisitions=4, policy=FairnessPolicy(threshold=0))
    for seed in range(20):
        trace = run_random(config, seed)
        assert not trace.of("move_to_secondary")
        grants_seen = 0
        waiting_since = {}
        for e in trace.events:
            if e.event == "enqueue":
                waiting_since[e.thread] = grants_seen
            elif e.event == "grant":
                assert grants_seen - waiting_since.pop(e.thread) <= 2 * n
                grants_seen += 1


def test_flush_draw_serves_secondary_first():
    config = SimConfig(sockets=(0, 1, 0, 1, 0), acquisitions=3, draws=(1, 1, 0))
    for seed in range(20):
        trace = run_random(config, seed)
        events = trace.events
        for k, e in enumerate(events):
            if e.event == "flush_draw":
                decide = next(x for x in events[k:] if x.event == "decide" and x.thread == e.thread)
                # there is a secondary queue exactly when the holder's grant word is a handle
                if decide.info["action"] in ("splice", "secondary"):
                    assert any(x.event == "splice_secondary" for x in events[k:events.index(decide)])
                else:
                    assert decide.info["action"] in ("next", "free")


# -- metrics ---------------------------------------------------------------------------


def test_fairness_factor_examples():
    assert fairness_factor([10, 10, 10, 10]) == 0.5
    assert fairness_factor([100, 0, 0, 0]) == 1.0
    assert fairness_factor([40, 30, 20, 10]) == pytest.approx(0.7)
    # odd count: top ceil(n/2)
    assert fairness_factor([1, 1, 1]) == pytest.approx(2 / 3)
    for bad in ([0, 0], [5]):
        with pytest.raises(ValueError):
            fairness_factor(bad)


@given(st.lists(st.integers(0, 1000), min_size=2, max_size=20).filter(lambda c: sum(c) > 0))
def test_fairness_factor_range(counts):
    f = fairness_factor(counts)
    assert 0.5 <= f <= 1.0


def test_handover_ratio_examples():
    sockets = {1: 0, 2: 1, 3: 1, 4: 0, 5: 0, 6: 1, 7: 1}
    assert intra_socket_handover_ratio([(1, 4), (4, 5), (5, 1), (1, 2)], sockets) == 0.75
    assert intra_socket_handover_ratio([(0, 1)], {0: 0, 1: 0}) == 1.0
    with pytest.raises(ValueError):
        intra_socket_handover_ratio([], sockets)
    assert consecutive_pairs([1, 4, 5]) == [(1, 4), (4, 5)]


def test_single_socket_trace_ratio_is_one():
    trace = run_random(SimConfig(sockets=(0, 0, 0), acquisitions=3), 2)
    assert intra_socket_handover_ratio(trace) == 1.0


def test_mcs_alternating_arrivals_ratio_zero():
    sim = Simulation(SimConfig(sockets=(0, 1, 0, 1), lock="mcs"))
    for t in range(4):
        sim.run_until(t, "enqueue")
    while not sim.finished:
        sim.step(sim.enabled()[0])
    assert sim.trace.grant_order == [0, 1, 2, 3]
    assert intra_socket_handover_ratio(sim.trace) == 0.0


def test_saturated_model_basics():
    mcs = saturated_contention([0, 1] * 4, 8000, "mcs")
    assert mcs.counts == [1000] * 8 or max(mcs.counts) - min(mcs.counts) <= 1
    assert mcs.fairness == pytest.approx(0.5, abs=1e-3)
    one = saturated_contention([0] * 4, 1000, "cna")
    assert one.locality == 1.0
    with pytest.raises(ValueError):
        saturated_contention([0, 1], 10, "tas")
