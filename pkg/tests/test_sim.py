from __future__ import annotations

import random

import pytest

from statenet.sim import (
    ConstantLatency,
    Delivery,
    PropagationNet,
    RegionTable,
    Simulator,
    UniformLatency,
    build_overlay,
    ms,
    propagation_net,
    run_propagation,
)


def recorder(sim: Simulator, node: int) -> list:
    seen = []
    sim.handlers[node] = lambda p: seen.append((sim.now, p))
    return seen


def test_equal_time_events_fire_in_creation_order():
    sim = Simulator(ConstantLatency(0), lambda i: 1e6)
    seen = recorder(sim, 0)
    sim.schedule(0, 0, "a")
    sim.schedule(5, 0, "late")
    sim.schedule(0, 0, "b")
    sim.run()
    assert [p for _, p in seen] == ["a", "b", "late"]


def test_schedule_order_against_sort_oracle():
    rng = random.Random(1)
    sim = Simulator(ConstantLatency(0), lambda i: 1e6)
    seen = recorder(sim, 0)
    delays = [rng.randrange(10_000) for _ in range(100_000)]
    for j, d in enumerate(delays):
        sim.schedule(d, 0, j)
    sim.run()
    want = sorted(range(len(delays)), key=lambda j: (delays[j], j))
    assert [p for _, p in seen] == want
    assert [t for t, _ in seen] == sorted(delays)


def test_negative_delay_rejected():
    sim = Simulator(ConstantLatency(0), lambda i: 1e6)
    with pytest.raises(ValueError):
        sim.schedule(-1, 0, None)


def test_megabyte_over_ten_megabytes_per_second():
    sim = Simulator(ConstantLatency(ms(50)), lambda i: 10e6 * 8)
    seen = recorder(sim, 1)
    start, arrive = sim.transmit(0, 1, "blob", {"body": 1_000_000})
    assert start == 0 and arrive == ms(150)
    sim.run()
    assert seen[0][0] == ms(150)


def test_uplink_is_fifo():
    sim = Simulator(ConstantLatency(ms(10)), lambda i: 8e6)  # 1 byte per microsecond
    seen = recorder(sim, 1)
    s1, a1 = sim.transmit(0, 1, "first", {"x": 1000})
    s2, a2 = sim.transmit(0, 1, "second", {"x": 500})
    assert s2 == s1 + 1000
    assert a2 == a1 + 500
    sim.run()
    assert [p.message for _, p in seen] == ["first", "second"]


def test_zero_byte_message_costs_latency_only():
    sim = Simulator(ConstantLatency(ms(30)), lambda i: 1e3)
    _, arrive = sim.transmit(0, 1, "ping", {"control": 0})
    assert arrive == ms(30)


def test_dead_target_drops_and_ledger_balances():
    sim = Simulator(ConstantLatency(ms(1)), lambda i: 1e6)
    recorder(sim, 1)
    sim.kill(1)
    assert sim.transmit(0, 1, "m", {"a": 10}) is None
    sim.revive(1)
    sim.transmit(0, 1, "m", {"a": 20})
    sim.kill(1)  # dies while the message is in flight
    sim.run()
    assert sim.drops == 2
    sim.ledger.check()
    assert sim.ledger.total_sent == 30 and sim.ledger.dropped == 30


def test_ledger_categories():
    sim = Simulator(ConstantLatency(0), lambda i: 1e9)
    recorder(sim, 1)
    sim.transmit(0, 1, "m", {"headers": 60, "slot_data": 64}, block=3)
    sim.run()
    assert sim.ledger.received(1, 3) == 124
    assert sim.ledger.received(1, 3, ["headers"]) == 60
    assert sim.ledger.by_category() == {"headers": 60, "slot_data": 64}


def test_uniform_latency_is_fixed_per_link():
    lat = UniformLatency(100, 200, seed=4)
    assert lat(1, 2) == lat(1, 2)
    assert all(100 <= lat(a, b) <= 200 for a in range(20) for b in range(20))


def test_region_table_validation():
    with pytest.raises(ValueError):
        RegionTable(("a", "b"), ((1.0, 2.0),), (0.5, 0.5), (10.0, 10.0))
    with pytest.raises(ValueError):
        RegionTable(("a",), ((1.0,),), (0.7,), (10.0,))
    t = RegionTable.load()
    assert len(t.assign(100, 1)) == 100


def test_overlay_strongly_connected():
    import networkx as nx

    cands = {i: [(i + 1) % 30] if i % 10 else [] for i in range(30)}
    peers = build_overlay(cands, 8, seed=1)
    g = nx.DiGraph([(a, b) for a, bs in peers.items() for b in bs])
    g.add_nodes_from(peers)
    assert nx.is_strongly_connected(g)


def test_two_node_coverage():
    net = PropagationNet(2, {0: [1], 1: [0]}, ConstantLatency(ms(40)), [8e6, 8e6])
    cov, _ = run_propagation(net, 1000)
    assert cov.curve() == [(0, 0.5), (ms(40) + 1000, 1.0)]
    assert cov.percentile(1.0) == ms(40) + 1000


def test_propagation_deterministic_and_monotone():
    net = propagation_net(300, fanout=8, seed=3)
    small, sim_a = run_propagation(net, 100_000)
    again, sim_b = run_propagation(propagation_net(300, fanout=8, seed=3), 100_000)
    assert small.curve() == again.curve()
    assert sim_a.log_digest == sim_b.log_digest
    big, _ = run_propagation(net, 2_000_000)
    for q in (0.5, 0.67, 0.95, 0.99, 1.0):
        assert big.percentile(q) >= small.percentile(q)
    assert small.fraction_at(small.percentile(1.0)) == 1.0


def test_log_export(tmp_path):
    sim = Simulator(ConstantLatency(5), lambda i: 1e6, keep_log=True)
    recorder(sim, 1)
    sim.transmit(0, 1, Delivery, {"a": 1})
    sim.run()
    out = tmp_path / "log.csv"
    sim.export_log(out)
    assert out.read_text().splitlines()[0] == "time_us,node,kind,bytes"
