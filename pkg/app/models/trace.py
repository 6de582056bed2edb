from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from app.models.packet import Packet, PacketKind, RrepPayload

US_PER_S = 1_000_000

CTRL_KEYS = ("RREQ", "RREP", "grat_RREP", "RERR", "HELLO")
DISCOVERY_KEYS = ("RREQ", "RREP", "grat_RREP")
MAINTENANCE_KEYS = ("RERR", "HELLO")


def ctrl_key(packet: Packet) -> str:
    """Counter bucket of a control packet; intermediate-node replies count apart"""
    if packet.kind is PacketKind.RREP:
        payload = packet.payload
        if isinstance(payload, RrepPayload) and payload.gratuitous:
            return "grat_RREP"
    return packet.kind.value


@dataclass
class TraceStats:
    """
    Aggregated counters of one simulation run

    Accumulated by the engine and the protocols while the run is live and
    treated as read-only afterwards. Times are stored in seconds except the raw
    transmission log, which keeps integer microseconds.
    """

    duration_s: float = 0.0
    payload_bits: int = 0

    data_originated: int = 0
    data_delivered: int = 0
    data_dropped: int = 0
    delivered_bits: int = 0
    data_transmissions: int = 0
    delivery_delays: List[float] = field(default_factory=list)
    drop_reasons: Counter = field(default_factory=Counter)
    received_per_flow: Counter = field(default_factory=Counter)

    ctrl_counts: Counter = field(default_factory=Counter)

    link_changes: int = 0
    link_breaks: int = 0
    links_declared_broken: int = 0
    degree_samples: List[float] = field(default_factory=list)

    discoveries_started: int = 0
    discoveries_succeeded: int = 0
    no_route_events: int = 0
    discovery_durations: List[float] = field(default_factory=list)
    failed_discovery_durations: List[float] = field(default_factory=list)

    repairs_attempted: int = 0
    repairs_succeeded: int = 0
    repairs_failed: int = 0
    repair_durations: List[float] = field(default_factory=list)

    salvage_attempts: int = 0
    salvages: int = 0
    cache_evictions: int = 0

    rerr_originations: int = 0
    rerr_receivers: int = 0
    # (originator, rreq_id) -> [ring attempt, nodes reached, repair flag]
    rreq_reach: Dict[Tuple[int, int], List[int]] = field(default_factory=dict)
    route_in_use_s: Dict[int, float] = field(default_factory=lambda: defaultdict(float))

    per_node_per_second_bits: Dict[Tuple[int, int], int] = field(
        default_factory=lambda: defaultdict(int)
    )
    discovery_bits_per_second: Dict[int, int] = field(default_factory=lambda: defaultdict(int))
    maintenance_bits_per_second: Dict[int, int] = field(
        default_factory=lambda: defaultdict(int)
    )
    repair_responses_per_second: Dict[int, int] = field(
        default_factory=lambda: defaultdict(int)
    )
    tx_log: Dict[int, List[Tuple[int, int]]] = field(default_factory=lambda: defaultdict(list))

    # -- recording ---------------------------------------------------------

    def record_tx(self, node: int, start_us: int, packet: Packet) -> None:
        second = start_us // US_PER_S
        self.tx_log[node].append((start_us, packet.size_bits))
        self.per_node_per_second_bits[(node, second)] += packet.size_bits
        if packet.kind is PacketKind.DATA:
            self.data_transmissions += 1
            return
        key = ctrl_key(packet)
        self.ctrl_counts[key] += 1
        if key in DISCOVERY_KEYS:
            self.discovery_bits_per_second[second] += packet.size_bits
        else:
            self.maintenance_bits_per_second[second] += packet.size_bits

    def record_delivery(self, packet: Packet, now_us: int) -> None:
        self.data_delivered += 1
        self.delivered_bits += packet.payload.payload_bits
        self.delivery_delays.append((now_us - packet.created_at) / US_PER_S)
        self.received_per_flow[packet.payload.flow_id] += 1

    def drop_data(self, packet: Packet, reason: str) -> None:
        self.data_dropped += 1
        self.drop_reasons[reason] += 1

    def record_repair_response(self, now_us: int) -> None:
        self.repair_responses_per_second[now_us // US_PER_S] += 1

    # -- derived -----------------------------------------------------------

    @property
    def ctrl_total(self) -> int:
        return sum(self.ctrl_counts[key] for key in CTRL_KEYS)

    @property
    def data_in_flight(self) -> int:
        return self.data_originated - self.data_delivered - self.data_dropped

    @property
    def p_nr(self) -> float:
        if self.discoveries_started == 0:
            return 0.0
        return self.no_route_events / self.discoveries_started

    @property
    def mean_degree(self) -> Optional[float]:
        if not self.degree_samples:
            return None
        return sum(self.degree_samples) / len(self.degree_samples)
