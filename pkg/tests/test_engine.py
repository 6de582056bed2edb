import numpy as np
import pytest

from app.models.packet import BROADCAST, HelloPayload, Packet, PacketKind
from app.models.trace import TraceStats
from app.services.engine import Channel, LinkLayerMonitor, Network, Simulator, to_us
from app.services.mobility import StaticPlacement
from app.utils.exceptions import SchedulingError


class Recorder:
    """Stand-in protocol that only records what the channel hands it"""

    def __init__(self, sim, promiscuous=False):
        self.sim = sim
        self.promiscuous = promiscuous
        self.received = []
        self.overheard = []
        self.failed = []

    def receive(self, packet, sender):
        self.received.append((self.sim.now, packet.uid, sender))

    def overhear(self, packet, sender):
        self.overheard.append((self.sim.now, packet.uid, sender))

    def on_tx_failed(self, packet, to):
        self.failed.append((self.sim.now, packet.uid, to))

    def buffered_data(self):
        return 0


def make_channel(positions, horizon_s=10.0, bandwidth_bps=2_000_000, ifq_capacity=50, promiscuous=()):
    sim = Simulator(to_us(horizon_s))
    mobility = StaticPlacement(positions)
    stats = TraceStats(duration_s=horizon_s)
    channel = Channel(
        sim, mobility, stats, np.random.default_rng(0), bandwidth_bps=bandwidth_bps, ifq_capacity=ifq_capacity
    )
    channel.receivers = [Recorder(sim, promiscuous=i in promiscuous) for i in range(len(positions))]
    return sim, channel, stats


def hello(uid, src=0):
    return Packet(
        kind=PacketKind.HELLO, src=src, dst=BROADCAST, prev_hop=src, ttl=1, size_bits=256, uid=uid,
        payload=HelloPayload(seq=0),
    )


def test_events_fire_in_time_then_scheduling_order():
    sim = Simulator(to_us(1))
    fired = []
    sim.call_at(200, lambda: fired.append("late"))
    sim.call_at(100, lambda: fired.append("first"))
    sim.call_at(100, lambda: fired.append("second"))
    sim.run()
    assert fired == ["first", "second", "late"]
    assert sim.dispatched == 3


def test_scheduling_in_the_past_is_rejected():
    sim = Simulator(to_us(1))
    sim.run(until_us=500)
    with pytest.raises(SchedulingError):
        sim.call_at(100, lambda: None)


def test_cancelled_and_late_events_never_fire():
    sim = Simulator(to_us(1))
    fired = []
    event = sim.call_at(10, lambda: fired.append("cancelled"))
    event.cancel()
    sim.call_at(to_us(2), lambda: fired.append("after horizon"))
    sim.run()
    assert fired == []
    assert sim.now == to_us(1)
    assert len(list(sim.pending())) == 1


def test_airtime_rounds_up_to_whole_microseconds():
    _, channel, _ = make_channel([(0, 0), (100, 0)])
    assert channel.airtime_us(4096) == 2048
    assert channel.airtime_us(4352) == 2176
    assert channel.airtime_us(1) == 1


def test_neighbors_include_the_range_boundary():
    _, channel, _ = make_channel([(0, 0), (250, 0), (500.5, 0)])
    assert channel.neighbors(0) == [1]
    assert channel.neighbors(1) == [0]
    assert channel.in_range(0, 1)
    assert not channel.in_range(1, 2)


def test_broadcast_reaches_neighbors_after_jitter_and_airtime():
    sim, channel, stats = make_channel([(0, 0), (200, 0), (600, 0)])
    channel.transmit(0, hello(uid=7))
    sim.run()
    [(arrival, uid, sender)] = channel.receivers[1].received
    assert (uid, sender) == (7, 0)
    assert 128 <= arrival <= 10_000 + 128
    assert channel.receivers[2].received == []
    assert stats.ctrl_counts["HELLO"] == 1


def test_unicast_failure_is_reported_to_sender(data_packet):
    sim, channel, _ = make_channel([(0, 0), (400, 0)])
    channel.transmit(0, data_packet(uid=3), to=1)
    sim.run()
    assert channel.receivers[1].received == []
    assert channel.receivers[0].failed == [(2176, 3, 1)]


def test_promiscuous_neighbors_overhear_unicasts(data_packet):
    sim, channel, _ = make_channel([(0, 0), (200, 0), (100, 100)], promiscuous={2})
    channel.transmit(0, data_packet(uid=5), to=1)
    sim.run()
    assert [uid for _, uid, _ in channel.receivers[1].received] == [5]
    assert [uid for _, uid, _ in channel.receivers[2].overheard] == [5]
    assert channel.receivers[2].received == []


def test_bandwidth_budget_defers_transmission_start(data_packet):
    sim, channel, stats = make_channel([(0, 0), (100, 0)], bandwidth_bps=10_000)
    for uid in range(3):
        packet = data_packet(uid=uid, payload_bytes=468)  # 4000 bits on air
        channel.transmit(0, packet, to=1)
    sim.run()
    assert [start for start, _ in stats.tx_log[0]] == [0, 400_000, 1_000_000]


def test_interface_queue_overflow_drops_data(data_packet):
    sim, channel, stats = make_channel([(0, 0), (100, 0)], ifq_capacity=2)
    for uid in range(4):
        channel.transmit(0, data_packet(uid=uid), to=1)
    sim.run()
    assert channel.ifq_drops == 1
    assert stats.drop_reasons["ifq_overflow"] == 1
    assert len(channel.receivers[1].received) == 3


def test_oversized_packet_is_rejected(data_packet):
    _, channel, _ = make_channel([(0, 0), (100, 0)], bandwidth_bps=1000)
    with pytest.raises(ValueError):
        channel.transmit(0, data_packet(), to=1)


def monitored_pair():
    sim, channel, stats = make_channel([(0, 0), (200, 0)], horizon_s=20.0)
    network = Network(sim, channel.mobility, channel, stats)
    network.attach(channel.receivers)
    network.start()
    return sim, network


def test_link_layer_monitor_declares_break_after_eight_missed_beacons():
    sim, network = monitored_pair()
    broken = []
    network.monitor.watch(0, 1, broken.append)
    sim.call_at(to_us(10), lambda: network.move_node(1, 900, 0))
    sim.run(until_us=to_us(11))
    assert broken == [1]
    assert network.monitor.detections == [(10_080_000, 0, 1)]
    assert not network.monitor.watching(0, 1)


def test_link_layer_monitor_resets_on_a_successful_beacon():
    sim, network = monitored_pair()
    broken = []
    network.monitor.watch(0, 1, broken.append)
    sim.call_at(to_us(10), lambda: network.move_node(1, 900, 0))
    sim.call_at(to_us(10.035), lambda: network.move_node(1, 200, 0))
    sim.run(until_us=to_us(11))
    assert broken == []
    assert network.monitor.watching(0, 1)

    sim.call_at(to_us(12), lambda: network.move_node(1, 900, 0))
    sim.run(until_us=to_us(13))
    assert network.monitor.detections == [(12_080_000, 0, 1)]


def test_link_scan_counts_breaks():
    sim, network = monitored_pair()
    sim.call_at(to_us(1.05), lambda: network.mobility.place(1, 900, 0))
    sim.run(until_us=to_us(2))
    assert network.stats.link_breaks == 1
    [change] = network.link_changes
    assert change.at == to_us(1.1)


def test_monitor_standalone_polls_immediately_when_already_out_of_range():
    sim, channel, _ = make_channel([(0, 0), (900, 0)])
    monitor = LinkLayerMonitor(sim, channel)
    broken = []
    monitor.watch(0, 1, broken.append)
    sim.run(until_us=to_us(1))
    assert broken == [1]
    assert monitor.detections[0][0] == 80_000


def test_link_layer_monitor_drops_pairs_once_their_route_goes_idle():
    sim, network = monitored_pair()
    broken = []
    network.monitor.watch(0, 1, broken.append, until_us=to_us(5))
    assert network.monitor.watching(0, 1)
    sim.call_at(to_us(10), lambda: network.move_node(1, 900, 0))
    sim.run(until_us=to_us(11))
    assert broken == []
    assert network.monitor.detections == []
    assert not network.monitor.watching(0, 1)


def test_rewatching_extends_the_monitored_window():
    sim, network = monitored_pair()
    broken = []
    network.monitor.watch(0, 1, broken.append, until_us=to_us(5))
    network.monitor.watch(0, 1, broken.append, until_us=to_us(15))
    network.monitor.watch(0, 1, broken.append, until_us=to_us(3))
    sim.call_at(to_us(10), lambda: network.move_node(1, 900, 0))
    sim.run(until_us=to_us(11))
    assert broken == [1]
    assert network.monitor.detections == [(10_080_000, 0, 1)]
