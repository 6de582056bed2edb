import networkx as nx
import pytest

from app.models.trace import TraceStats
from app.services.engine import Simulator, to_us
from app.services.routing_common import BufferOutcome, ErsSchedule, RreqSeen, SendBuffer, next_hop_graph


def test_default_ring_schedule():
    ers = ErsSchedule()
    assert ers.ring_attempts == 4
    assert ers.max_rings == 7
    assert ers.ring_ttls() == [1, 3, 5, 7, 35, 35, 35]
    assert ers.next(7) is None
    assert ers.next(0).wait_s == pytest.approx(0.1)
    assert ers.next(4).wait_s == pytest.approx(3.5)


def test_ring_schedule_rejects_negative_attempts():
    with pytest.raises(ValueError):
        ErsSchedule().next(-1)


def test_threshold_caps_the_last_ring():
    ers = ErsSchedule(ttl_start=2, ttl_increment=4, ttl_threshold=7, max_attempts=1)
    assert ers.ring_ttls() == [2, 6, 7, 35]


def make_buffer(capacity=2, timeout_s=1.0):
    sim = Simulator(to_us(10))
    stats = TraceStats(duration_s=10)
    return sim, stats, SendBuffer(0, sim, stats, capacity=capacity, timeout_s=timeout_s)


def test_buffer_overflow_drops_the_oldest(data_packet):
    sim, stats, buffer = make_buffer()
    for uid in (1, 2, 3):
        assert buffer.add(data_packet(uid=uid, dst=4)) is BufferOutcome.ACCEPTED
    assert stats.drop_reasons["buffer_overflow"] == 1
    assert [p.uid for p in buffer.drain(4)] == [2, 3]


def test_buffered_packets_time_out(data_packet):
    sim, stats, buffer = make_buffer()
    buffer.add(data_packet(uid=1, dst=4))
    sim.run(until_us=to_us(0.5))
    buffer.add(data_packet(uid=2, dst=5))
    sim.run(until_us=to_us(1.2))
    assert stats.drop_reasons["buffer_timeout"] == 1
    assert buffer.destinations() == [5]
    sim.run()
    assert len(buffer) == 0
    assert stats.data_dropped == 2


def test_drained_packets_do_not_time_out(data_packet):
    sim, stats, buffer = make_buffer()
    buffer.add(data_packet(uid=1, dst=4))
    assert buffer.has(4)
    assert [p.uid for p in buffer.drain(4)] == [1]
    sim.run()
    assert stats.data_dropped == 0


def test_only_data_is_buffered(data_packet):
    from dataclasses import replace

    from app.models.packet import PacketKind

    _, _, buffer = make_buffer()
    with pytest.raises(ValueError):
        buffer.add(replace(data_packet(), kind=PacketKind.RREQ))


def test_rreq_suppression_expires_after_horizon():
    seen = RreqSeen(horizon_s=1.0)
    assert seen.first_time(3, 1, 0)
    assert not seen.first_time(3, 1, 500_000)
    assert seen.first_time(3, 2, 500_000)
    assert seen.first_time(3, 1, 1_000_000)


@pytest.mark.parametrize("protocol", ["aodv", "aodv-ll", "dymo"])
def test_next_hops_are_loop_free_on_a_static_grid(static_network, protocol):
    grid = [(x * 200.0, y * 200.0) for y in range(3) for x in range(3)]
    network = static_network(grid, protocol, horizon_s=20.0)
    network.add_cbr_flow(0, 0, 8, 4.0)
    network.add_cbr_flow(1, 2, 6, 4.0)
    network.add_cbr_flow(2, 7, 1, 4.0)
    network.sim.run()

    for src, dst in ((0, 8), (2, 6), (7, 1)):
        graph = next_hop_graph(network.protocols, dst)
        assert nx.is_directed_acyclic_graph(graph)
        path = nx.shortest_path(graph, src, dst)
        assert len(path) - 1 <= len(grid)
    assert network.stats.data_delivered > 0.95 * network.stats.data_originated
