import pytest

from app.models.scenario import ProtocolName, Scenario
from app.models.trace import TraceStats
from app.services import harness
from app.services.dsr import RouteCache
from app.services.engine import to_us


def test_cache_rejects_paths_it_cannot_use():
    cache = RouteCache(owner=0, capacity=4)
    assert not cache.add((0,), 0)
    assert not cache.add((1, 2, 3), 0)
    assert not cache.add((0, 1, 0, 2), 0)
    assert cache.add((0, 1, 2), 0)
    assert not cache.add((0, 1, 2), 5)
    assert len(cache) == 1


def test_full_cache_evicts_the_oldest_path():
    stats = TraceStats()
    cache = RouteCache(owner=0, capacity=2, stats=stats)
    for path in [(0, 1), (0, 2), (0, 3)]:
        cache.add(path, 0)
    assert cache.paths() == [(0, 2), (0, 3)]
    assert cache.evictions == 1
    assert stats.cache_evictions == 1


def test_lookup_uses_the_shortest_prefix():
    cache = RouteCache(owner=0, capacity=8)
    cache.add((0, 1, 2, 3, 5), 0)
    cache.add((0, 4, 5), 0)
    assert cache.lookup(5) == (0, 4, 5)
    assert cache.lookup(3) == (0, 1, 2, 3)
    assert cache.lookup(9) is None


def test_removing_a_link_truncates_paths_in_either_direction():
    cache = RouteCache(owner=0, capacity=8)
    cache.add((0, 1, 2, 3), 0)
    cache.add((0, 5), 0)
    assert cache.remove_link(2, 1) == 1
    assert cache.paths() == [(0, 1), (0, 5)]
    assert cache.remove_link(0, 5) == 1
    assert cache.paths() == [(0, 1)]


def test_line_discovery_without_beacons(static_network, line_positions):
    network = static_network(line_positions(4), "dsr", horizon_s=10.0)
    network.add_cbr_flow(0, 0, 3, 4.0, stop_us=to_us(5))
    network.sim.run()

    stats = network.stats
    assert stats.data_delivered == stats.data_originated
    assert stats.ctrl_counts["HELLO"] == 0
    assert (0, 1, 2, 3) in network.protocols[0].cache
    assert network.protocols[3].cache.lookup(0) == (3, 2, 1, 0)


def test_relay_salvages_onto_a_cached_alternate(static_network):
    # 4 reaches 1 and 2 but neither end of the line
    positions = [(0, 0), (200, 0), (420, 0), (620, 0), (310, 150)]
    network = static_network(positions, "dsr", horizon_s=10.0)
    network.add_cbr_flow(0, 4, 3, 4.0)
    network.add_cbr_flow(1, 0, 3, 4.0, start_us=to_us(2))
    network.sim.call_at(to_us(5), lambda: network.move_node(1, 160, 60))
    network.sim.run()

    stats = network.stats
    assert stats.salvage_attempts >= 1
    assert stats.salvages >= 1
    assert stats.links_declared_broken >= 1
    assert stats.received_per_flow[1] > 0


def test_failed_salvage_reports_the_link_to_the_source(static_network, line_positions):
    network = static_network(line_positions(4), "dsr", horizon_s=10.0)
    network.add_cbr_flow(0, 0, 3, 4.0)
    network.sim.call_at(to_us(5), lambda: network.move_node(3, 600, 900))
    network.sim.run()

    stats = network.stats
    assert stats.drop_reasons["salvage_failed"] >= 1
    assert stats.rerr_originations >= 1
    assert stats.rerr_receivers >= 1


def test_dsr_m_keeps_a_smaller_cache(static_network, line_positions):
    dsr = static_network(line_positions(2), "dsr")
    dsrm = static_network(line_positions(2), "dsr-m")
    assert dsr.protocols[0].cache.capacity == 1024
    assert dsrm.protocols[0].cache.capacity == 256
    assert dsrm.protocols[0].promiscuous


def test_warm_cache_sends_without_discovery(static_network, line_positions):
    network = static_network(line_positions(4), "dsr", horizon_s=10.0)
    network.protocols[0].cache.add((0, 1, 2, 3), 0)
    network.add_cbr_flow(0, 0, 3, 4.0, stop_us=to_us(5))
    network.sim.run()

    stats = network.stats
    assert stats.ctrl_counts["RREQ"] == 0
    assert stats.discoveries_started == 0
    assert stats.data_delivered == stats.data_originated > 0


def test_piggybacked_errors_prune_caches_reached_by_the_next_request(static_network, line_positions):
    network = static_network(line_positions(4), "dsr", horizon_s=5.0)
    source, relay = network.protocols[:2]
    # node 5 does not exist; the (2, 5) link only lives in the relay's cache
    relay.cache.add((1, 2, 5), 0)
    source.remember_error((2, 5))

    network.add_cbr_flow(0, 0, 3, 4.0, stop_us=to_us(1))
    network.sim.run()

    assert source.pending_errors == []
    assert (1, 2, 5) not in relay.cache
    assert relay.cache.lookup(2) == (1, 2)
    assert all(5 not in path for path in relay.cache.paths())
    assert network.stats.data_delivered > 0


def test_smaller_cache_turns_over_faster():
    # tiny caches so even a short mobile run fills them
    scenario = Scenario(
        protocol=ProtocolName.DSR,
        nodes=10,
        area=(500.0, 500.0),
        speed_mps=30.0,
        traffic_pps=4.0,
        flows=3,
        duration_s=60.0,
        seed=5,
        route_cache_scale=0.01,
    )
    dsr = harness.run(scenario)
    dsrm = harness.run(scenario.model_copy(update={"protocol": ProtocolName.DSR_M}))
    assert dsrm.trace.cache_evictions > dsr.trace.cache_evictions


def test_cache_scale_sets_both_capacities():
    scenario = Scenario(protocol=ProtocolName.DSR_M, nodes=4, flows=1, duration_s=1.0, route_cache_scale=0.5)
    network = harness.build_network(scenario)
    assert network.protocols[0].cache.capacity == 128
    dsr = harness.build_network(scenario.model_copy(update={"protocol": ProtocolName.DSR}))
    assert dsr.protocols[0].cache.capacity == 512


@pytest.mark.slow
def test_dsr_m_evicts_more_than_dsr_on_the_trend_preset():
    scenarios = [s for s in harness.load_sweep("trend").expand(seeds=2) if s.speed_mps == 30]
    evictions = {ProtocolName.DSR: 0, ProtocolName.DSR_M: 0}
    for scenario in scenarios:
        if scenario.protocol in evictions:
            evictions[scenario.protocol] += harness.run(scenario).trace.cache_evictions
    assert evictions[ProtocolName.DSR_M] > evictions[ProtocolName.DSR]
