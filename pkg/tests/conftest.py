from typing import Optional, Sequence, Tuple

import numpy as np
import pytest

from app.models.packet import DataPayload, Packet, PacketKind
from app.models.results import MetricRow
from app.models.scenario import ProtocolName, Scenario
from app.models.trace import TraceStats
from app.services.engine import Channel, Network, Simulator, to_us
from app.services.harness import PROTOCOLS
from app.services.mobility import StaticPlacement
from app.services.routing_common import RoutingParams


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run long ensemble checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="long ensemble check; use --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def build_static_network(
    positions: Sequence[Tuple[float, float]],
    protocol: str = "aodv",
    horizon_s: float = 30.0,
    params: RoutingParams = RoutingParams(),
    range_m: float = 250.0,
    bandwidth_bps: int = 2_000_000,
    seed: int = 1,
) -> Network:
    """A scripted-topology run: fixed positions, one protocol instance per node, link scans started"""
    mobility = StaticPlacement(positions)
    sim = Simulator(to_us(horizon_s))
    stats = TraceStats(duration_s=horizon_s, payload_bits=512 * 8)
    channel = Channel(sim, mobility, stats, np.random.default_rng(seed), range_m=range_m, bandwidth_bps=bandwidth_bps)
    network = Network(sim, mobility, channel, stats, sizes=params.sizes, net_diameter=params.ers.net_diameter)
    protocol_cls = PROTOCOLS[ProtocolName(protocol)]
    network.attach([protocol_cls(node, network, params) for node in range(mobility.nodes)])
    network.start()
    return network


@pytest.fixture
def static_network():
    return build_static_network


@pytest.fixture
def line_positions():
    """``count`` nodes 200 m apart on a line; with a 250 m range only adjacent nodes hear each other"""

    def make(count: int, spacing: float = 200.0):
        return [(i * spacing, 0.0) for i in range(count)]

    return make


@pytest.fixture
def data_packet():
    def make(uid: int = 1, src: int = 0, dst: int = 1, ttl: int = 35, created_at: int = 0, payload_bytes: int = 512):
        return Packet(
            kind=PacketKind.DATA,
            src=src,
            dst=dst,
            prev_hop=src,
            ttl=ttl,
            size_bits=(payload_bytes + 32) * 8,
            uid=uid,
            payload=DataPayload(flow_id=0, payload_bits=payload_bytes * 8),
            created_at=created_at,
        )

    return make


@pytest.fixture
def tiny_scenario():
    return Scenario(
        protocol=ProtocolName.AODV,
        nodes=8,
        area=(600.0, 600.0),
        speed_mps=10.0,
        pause_s=0.0,
        traffic_pps=4.0,
        flows=2,
        duration_s=20.0,
        seed=11,
    )


@pytest.fixture
def metric_row():
    """Synthetic per-run rows for aggregation and verdict tests"""

    def make(
        preset: str,
        protocol: str,
        seed: int,
        nodes: int = 25,
        speed_mps: float = 30.0,
        pause_s: float = 0.0,
        throughput_bps: float = 1000.0,
        nrl: Optional[float] = 1.0,
        avg_e2ed_s: Optional[float] = 0.1,
    ) -> MetricRow:
        scenario_id = f"{preset}/{protocol}/n{nodes}-v{speed_mps:g}-p{pause_s:g}-r4-s{seed}"
        counters = dict.fromkeys(
            [name for name, info in MetricRow.model_fields.items() if info.annotation is int and name not in ("nodes", "seed")],
            0,
        )
        return MetricRow(
            scenario_id=scenario_id,
            protocol=protocol,
            nodes=nodes,
            speed_mps=speed_mps,
            pause_s=pause_s,
            traffic_pps=4.0,
            seed=seed,
            throughput_bps=throughput_bps,
            avg_e2ed_s=avg_e2ed_s,
            nrl=nrl,
            **counters,
        )

    return make
