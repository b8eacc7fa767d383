import threading

import pytest

from cnalock.topology import (
    NOT_RECORDED,
    TopologyProvider,
    bind_thread,
    current_thread_id,
    os_node_map,
    parse_mock_spec,
    _parse_cpulist,
)


def test_mock_lookup():
    topo = TopologyProvider("mock", {1: 0, 2: 1})
    assert topo.current_numa_node(1) == 0
    assert topo.current_numa_node(2) == 1


def test_empty_map_reports_zero_and_one_socket():
    topo = TopologyProvider("mock")
    assert [topo.current_numa_node(t) for t in range(5)] == [0] * 5
    assert topo.socket_count() == 1


def test_replacement_takes_effect():
    topo = TopologyProvider("mock", {1: 0})
    assert topo.current_numa_node(1) == 0
    topo.set_mock_topology({1: 3})
    assert topo.current_numa_node(1) == 3


def test_rejects_negative_socket():
    topo = TopologyProvider("mock")
    with pytest.raises(ValueError):
        topo.set_mock_topology({0: -1})


def test_socket_count_mock():
    assert TopologyProvider("mock", {1: 0, 2: 1}).socket_count() == 2


def test_set_mock_on_real_provider_fails():
    with pytest.raises(RuntimeError):
        TopologyProvider("real").set_mock_topology({0: 0})


def test_bad_mode_and_interval():
    with pytest.raises(ValueError):
        TopologyProvider("virtual")
    with pytest.raises(ValueError):
        TopologyProvider("mock", refresh_interval=0)


def test_calling_thread_uses_bound_id():
    topo = TopologyProvider("mock", {7: 1})
    seen = []

    def body():
        bind_thread(7)
        seen.append((current_thread_id(), topo.current_numa_node()))

    t = threading.Thread(target=body)
    t.start()
    t.join()
    assert seen == [(7, 1)]


def test_real_mode_matches_os_listing():
    # whatever the host reports, every answer is a known node and never the sentinel
    nodes = set(os_node_map().values()) or {0}
    topo = TopologyProvider("real")
    answers = {topo.current_numa_node() for _ in range(3000)}
    assert answers <= nodes
    assert NOT_RECORDED not in answers
    assert topo.socket_count() == len(nodes)


def test_real_mode_refreshes_on_interval(monkeypatch):
    topo = TopologyProvider("real", refresh_interval=4)
    calls = []
    monkeypatch.setattr(topo, "_query_os", lambda: calls.append(1) or 0)
    for _ in range(10):
        topo.current_numa_node()
    # queries 1, 5, 9
    assert len(calls) == 3


def test_degraded_when_os_unavailable(monkeypatch):
    topo = TopologyProvider("real")
    topo._getcpu = None
    topo._cache = threading.local()
    assert topo.current_numa_node() == 0
    assert topo.degraded


def test_os_node_map_missing_root(tmp_path):
    assert os_node_map(str(tmp_path / "absent")) == {}


def test_os_node_map_fake_sysfs(tmp_path):
    for node, cpus in ((0, "0-1,4"), (1, "2-3")):
        d = tmp_path / f"node{node}"
        d.mkdir()
        (d / "cpulist").write_text(cpus + "\n")
    assert os_node_map(str(tmp_path)) == {0: 0, 1: 0, 4: 0, 2: 1, 3: 1}


def test_parse_cpulist():
    assert _parse_cpulist("0-2,5,7-8\n") == [0, 1, 2, 5, 7, 8]
    assert _parse_cpulist("") == []


def test_parse_mock_spec():
    assert parse_mock_spec("t0:0,t1:1, t2:1") == {0: 0, 1: 1, 2: 1}
    assert parse_mock_spec("3:2") == {3: 2}
    with pytest.raises(ValueError):
        parse_mock_spec("t0")


def test_from_env():
    assert TopologyProvider.from_env({"CNA_MOCK_TOPOLOGY": "t0:0,t1:1"}).mode == "mock"
    assert TopologyProvider.from_env({}).mode == "real"
