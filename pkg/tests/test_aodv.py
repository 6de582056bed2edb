import pytest

from app.services.aodv import AodvRouteEntry, RouteState, is_better_offer
from app.services.engine import to_us


def test_fresher_sequence_number_wins():
    assert is_better_offer(3, 2, True, 4, 9)
    assert not is_better_offer(4, 2, True, 3, 1)
    assert is_better_offer(4, 5, True, 4, 3)
    assert not is_better_offer(4, 3, True, 4, 3)
    assert is_better_offer(4, 3, False, 4, 3)


def test_entry_is_usable_only_while_valid_and_alive():
    entry = AodvRouteEntry(dest=3, dest_seq=1, hop_count=2, next_hop=1, lifetime=100)
    assert entry.usable(99)
    assert not entry.usable(100)
    entry.state = RouteState.UNDER_REPAIR
    assert not entry.usable(50)


def test_line_discovery_delivers_every_packet(static_network, line_positions):
    network = static_network(line_positions(4), "aodv", horizon_s=20.0)
    network.add_cbr_flow(0, 0, 3, 2.0, stop_us=to_us(10))
    network.sim.run()

    stats = network.stats
    assert stats.data_originated == 21
    assert stats.data_delivered == stats.data_originated
    # ttl 1 ring, then ttl 3: the source plus two relays
    assert stats.ctrl_counts["RREQ"] == 4
    assert stats.ctrl_counts["RREP"] == 3
    assert stats.discoveries_succeeded == 1
    [duration] = stats.discovery_durations
    assert 0.1 <= duration < 0.2
    assert network.protocols[0].table[3].next_hop == 1
    assert network.protocols[0].table[3].hop_count == 3


@pytest.mark.parametrize("hops, earliest, latest", [(5, 0.4, 0.9), (6, 0.9, 2.0)])
def test_ring_ttl_bounds_the_search_radius(static_network, line_positions, hops, earliest, latest):
    network = static_network(line_positions(hops + 1), "aodv-ll", horizon_s=10.0)
    network.add_cbr_flow(0, 0, hops, 1.0, stop_us=0)
    network.sim.run()

    [duration] = network.stats.discovery_durations
    assert earliest <= duration < latest
    assert network.stats.data_delivered == 1


def repair_topology():
    # 4 bridges 2 and 3, but is out of reach of 1
    return [(0, 0), (200, 0), (400, 0), (600, 0), (500, 150)]


def test_relay_near_the_destination_repairs_locally(static_network):
    network = static_network(repair_topology(), "aodv-ll", horizon_s=15.0)
    network.add_cbr_flow(0, 0, 3, 4.0)
    network.sim.call_at(to_us(5), lambda: network.move_node(3, 700, 150))
    network.sim.run()

    stats = network.stats
    assert stats.repairs_attempted >= 1
    assert stats.repairs_succeeded >= 1
    assert network.protocols[2].table[3].next_hop == 4
    assert network.protocols[2].table[3].state is RouteState.VALID
    assert stats.repair_durations and all(d > 0 for d in stats.repair_durations)
    assert stats.data_delivered > 0.9 * stats.data_originated


def test_hello_loss_declares_the_link_broken(static_network):
    network = static_network(repair_topology(), "aodv", horizon_s=15.0)
    network.add_cbr_flow(0, 0, 3, 4.0)
    network.sim.call_at(to_us(5), lambda: network.move_node(3, 700, 150))
    network.sim.run()

    stats = network.stats
    assert stats.ctrl_counts["HELLO"] > 0
    assert stats.links_declared_broken >= 1
    assert stats.drop_reasons["link_failure"] >= 1


def test_unrepairable_break_sends_rerr_to_the_source(static_network, line_positions):
    network = static_network(line_positions(4), "aodv-ll", horizon_s=30.0)
    network.add_cbr_flow(0, 0, 3, 2.0)
    network.sim.call_at(to_us(5), lambda: network.move_node(2, 400, 900))
    network.sim.run()

    stats = network.stats
    assert stats.ctrl_counts["RERR"] >= 1
    assert stats.rerr_originations >= 1
    assert stats.rerr_receivers >= 1
    assert stats.no_route_events >= 1
    assert stats.failed_discovery_durations
    assert network.protocols[0].usable_route(3) is None


@pytest.mark.parametrize("protocol, replies", [("aodv", True), ("aodv-ll", True), ("dymo", False)])
def test_intermediate_replies_only_where_allowed(static_network, line_positions, protocol, replies):
    network = static_network(line_positions(4), protocol, horizon_s=10.0)
    network.add_cbr_flow(0, 1, 3, 2.0)
    network.add_cbr_flow(1, 0, 3, 2.0, start_us=to_us(2))
    network.sim.run()

    stats = network.stats
    assert (stats.ctrl_counts["grat_RREP"] >= 1) is replies
    assert stats.discoveries_succeeded == 2
    assert stats.received_per_flow[1] > 0


def test_rerr_reaches_every_precursor(static_network, monkeypatch):
    # sources 0 and 1 both reach 4 through relay 2, and cannot hear each other
    positions = [(0, 0), (0, 300), (180, 150), (400, 150), (600, 150)]
    network = static_network(positions, "aodv-ll", horizon_s=8.0)
    heard = []
    for node in (0, 1):
        protocol = network.protocols[node]
        original = protocol.handle_rerr

        def record(packet, sender, node=node, original=original):
            heard.append((node, sender))
            original(packet, sender)

        monkeypatch.setattr(protocol, "handle_rerr", record)

    network.add_cbr_flow(0, 0, 4, 4.0)
    network.add_cbr_flow(1, 1, 4, 4.0, start_us=to_us(1))
    network.sim.call_at(to_us(5), lambda: network.move_node(3, 400, 900))
    network.sim.run()

    assert network.stats.received_per_flow[0] > 0
    assert network.stats.received_per_flow[1] > 0
    assert {(0, 2), (1, 2)} <= set(heard)
    assert network.protocols[0].usable_route(4) is None
    assert network.protocols[1].usable_route(4) is None


def test_link_layer_monitor_ignores_routes_gone_idle(static_network, line_positions):
    network = static_network(line_positions(3), "aodv-ll", horizon_s=30.0)
    network.add_cbr_flow(0, 0, 2, 2.0, stop_us=to_us(2))
    network.sim.call_at(to_us(20), lambda: network.move_node(2, 400, 900))
    network.sim.run()

    assert network.stats.data_delivered == network.stats.data_originated
    assert network.monitor.detections == []
    assert network.stats.links_declared_broken == 0
    assert not network.monitor.watching(1, 2)


def test_repair_supersedes_a_plain_search_in_progress(static_network, line_positions):
    network = static_network(line_positions(4), "aodv-ll", horizon_s=5.0)
    relay = network.protocols[1]
    seen = {}

    def search_then_repair():
        relay.start_discovery(3)
        relay.start_discovery(3, repair_ttl=4)
        relay.start_discovery(3)
        seen["repair"] = relay.discoveries[3].repair
        seen["ttl"] = relay.discoveries[3].repair_ttl

    network.sim.call_at(to_us(1), search_then_repair)
    network.sim.run()

    assert seen == {"repair": True, "ttl": 4}
    assert network.stats.discoveries_started == 1
    assert network.stats.repairs_succeeded == 1
    assert network.stats.discoveries_succeeded == 0
    assert 3 not in relay.discoveries
