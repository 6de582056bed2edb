import logging
import math
from abc import ABC, abstractmethod
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import networkx as nx
from pydantic import BaseModel, ConfigDict, Field

from app.models.packet import Packet, PacketKind, PacketSizes
from app.services.engine import Event, EventKind, to_s, to_us

logger = logging.getLogger(__name__)


class RingStep(NamedTuple):
    ttl: int
    wait_s: float


class ErsSchedule(BaseModel):
    """Expanding ring search: TTL per attempt and how long to wait for a reply"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    ttl_start: int = Field(1, ge=1)
    ttl_increment: int = Field(2, ge=1)
    ttl_threshold: int = Field(7, ge=1)
    net_diameter: int = Field(35, ge=1)
    max_attempts: int = Field(3, ge=0, description="Network-wide retries after the rings")
    ring_wait_per_ttl: float = Field(0.05, gt=0)

    @property
    def ring_attempts(self) -> int:
        if self.ttl_start >= self.ttl_threshold:
            return 1
        return math.ceil((self.ttl_threshold - self.ttl_start) / self.ttl_increment) + 1

    @property
    def max_rings(self) -> int:
        return self.ring_attempts + self.max_attempts

    def wait_for(self, ttl: int) -> float:
        return 2 * self.ring_wait_per_ttl * ttl

    def next(self, attempt: int) -> Optional[RingStep]:
        """TTL and reply wait for ``attempt`` (0-based); None once the search is exhausted"""
        if attempt < 0:
            raise ValueError("attempt must be nonnegative")
        if attempt < self.ring_attempts:
            ttl = min(self.ttl_start + attempt * self.ttl_increment, self.ttl_threshold)
        elif attempt < self.max_rings:
            ttl = self.net_diameter
        else:
            return None
        return RingStep(ttl=ttl, wait_s=self.wait_for(ttl))

    def ring_ttls(self) -> List[int]:
        return [self.next(i).ttl for i in range(self.max_rings)]


@dataclass(frozen=True)
class RoutingParams:
    """Protocol constants shared by every node of one run"""

    ers: ErsSchedule = field(default_factory=ErsSchedule)
    sizes: PacketSizes = field(default_factory=PacketSizes)
    buffer_capacity: int = 64
    buffer_timeout_s: float = 30.0
    rreq_seen_horizon_s: float = 10.0
    hello_interval_s: float = 1.0
    allowed_hello_loss: int = 2
    aodv_route_lifetime_s: float = 10.0
    dymo_route_lifetime_s: float = 5.0
    dymo_rerr_ttl: int = 3
    repair_min_ttl: int = 2
    repair_add_ttl: int = 2
    dsr_cache_capacity: int = 1024
    dsrm_cache_capacity: int = 256
    salvage_limit: int = 1


class BufferOutcome(str, Enum):
    ACCEPTED = "accepted"
    DROPPED = "dropped"


@dataclass(slots=True)
class BufferedPacket:
    packet: Packet
    enqueued_at: int
    timer: Optional[Event] = None


class SendBuffer:
    """
    DATA packets waiting for a route

    Each packet gets its own expiry timer; overflow drops the oldest entry.
    Every packet that enters leaves exactly once, by drain or by a recorded drop.
    """

    def __init__(self, node: int, sim, stats, capacity: int = 64, timeout_s: float = 30.0):
        self.node = node
        self.sim = sim
        self.stats = stats
        self.capacity = capacity
        self.timeout_us = to_us(timeout_s)
        self._entries: "OrderedDict[int, BufferedPacket]" = OrderedDict()

    def __len__(self) -> int:
        return len(self._entries)

    def has(self, dst: int) -> bool:
        return any(e.packet.dst == dst for e in self._entries.values())

    def destinations(self) -> List[int]:
        return sorted({e.packet.dst for e in self._entries.values()})

    def add(self, packet: Packet) -> BufferOutcome:
        if packet.kind is not PacketKind.DATA:
            raise ValueError("only DATA packets are buffered")
        if self.capacity <= 0:
            self.stats.drop_data(packet, "buffer_overflow")
            return BufferOutcome.DROPPED
        if len(self._entries) >= self.capacity:
            _, oldest = self._entries.popitem(last=False)
            if oldest.timer is not None:
                oldest.timer.cancel()
            self.stats.drop_data(oldest.packet, "buffer_overflow")
        uid = packet.uid
        entry = BufferedPacket(packet=packet, enqueued_at=self.sim.now)
        entry.timer = self.sim.call_later(
            self.timeout_us,
            lambda: self._expire(uid),
            kind=EventKind.TIMER,
            node=self.node,
            detail=f"buffer-timeout uid={uid}",
        )
        self._entries[uid] = entry
        return BufferOutcome.ACCEPTED

    def _expire(self, uid: int) -> None:
        entry = self._entries.pop(uid, None)
        if entry is not None:
            self.stats.drop_data(entry.packet, "buffer_timeout")

    def drain(self, dst: int) -> List[Packet]:
        """Remove and return every packet for ``dst`` in arrival order"""
        out = []
        for uid in [u for u, e in self._entries.items() if e.packet.dst == dst]:
            entry = self._entries.pop(uid)
            if entry.timer is not None:
                entry.timer.cancel()
            out.append(entry.packet)
        return out

    def drop_all(self, dst: int, reason: str) -> int:
        dropped = self.drain(dst)
        for packet in dropped:
            self.stats.drop_data(packet, reason)
        return len(dropped)


class RreqSeen:
    """Flood suppression: each (originator, rreq_id) is processed once per horizon"""

    def __init__(self, horizon_s: float = 10.0):
        self.horizon_us = to_us(horizon_s)
        self._seen: "OrderedDict[Tuple[int, int], int]" = OrderedDict()

    def first_time(self, orig: int, rreq_id: int, now_us: int) -> bool:
        while self._seen:
            key, seen_at = next(iter(self._seen.items()))
            if now_us - seen_at < self.horizon_us:
                break
            del self._seen[key]
        key = (orig, rreq_id)
        if key in self._seen:
            return False
        self._seen[key] = now_us
        return True

    def __len__(self) -> int:
        return len(self._seen)


@dataclass(slots=True)
class Discovery:
    dst: int
    started_at: int
    attempt: int = 0
    repair: bool = False
    repair_ttl: int = 0
    timer: Optional[Event] = None


class RoutingProtocol(ABC):
    """
    Per-node protocol instance the engine dispatches into

    What this does: holds the send buffer, flood-suppression cache and the
    expanding ring discovery state machine shared by every protocol
    Why: AODV, DSR and DYMO differ in what they store and how they reply, not
    in how a search is paced or how its outcome is recorded
    How: subclasses implement the packet handlers plus ``send_rreq`` and
    ``flush``; discoveries and repairs report durations and outcomes to the
    run's TraceStats
    """

    name = "base"
    promiscuous = False

    def __init__(self, node: int, network, params: RoutingParams):
        self.node = node
        self.net = network
        self.sim = network.sim
        self.stats = network.stats
        self.params = params
        self.ers = params.ers
        self.sizes = params.sizes
        self.buffer = SendBuffer(
            node, self.sim, self.stats, params.buffer_capacity, params.buffer_timeout_s
        )
        self.seen = RreqSeen(params.rreq_seen_horizon_s)
        self.discoveries: Dict[int, Discovery] = {}
        self.seq = 0
        self._rreq_ids = 0

    # -- engine hooks --------------------------------------------------------

    @abstractmethod
    def send_data(self, packet: Packet) -> None:
        """A locally originated DATA packet enters the protocol"""

    def receive(self, packet: Packet, sender: int) -> None:
        self.heard_from(sender)
        kind = packet.kind
        if kind is PacketKind.DATA:
            self.handle_data(packet, sender)
        elif kind is PacketKind.RREQ:
            self.handle_rreq(packet, sender)
        elif kind is PacketKind.RREP:
            self.handle_rrep(packet, sender)
        elif kind is PacketKind.RERR:
            self.handle_rerr(packet, sender)
        elif kind is PacketKind.HELLO:
            self.handle_hello(packet, sender)

    def overhear(self, packet: Packet, sender: int) -> None:
        """Promiscuous copy of a unicast addressed to another node"""

    def on_tx_failed(self, packet: Packet, next_hop: int) -> None:
        if packet.kind is PacketKind.DATA:
            self.stats.drop_data(packet, "link_failure")

    def on_link_broken(self, neighbor: int) -> None:
        """A monitored next hop was declared unreachable"""

    def heard_from(self, neighbor: int) -> None:
        """Any reception from ``neighbor``"""

    def buffered_data(self) -> int:
        return len(self.buffer)

    # -- packet handlers -----------------------------------------------------

    @abstractmethod
    def handle_data(self, packet: Packet, sender: int) -> None: ...

    @abstractmethod
    def handle_rreq(self, packet: Packet, sender: int) -> None: ...

    @abstractmethod
    def handle_rrep(self, packet: Packet, sender: int) -> None: ...

    @abstractmethod
    def handle_rerr(self, packet: Packet, sender: int) -> None: ...

    def handle_hello(self, packet: Packet, sender: int) -> None:
        pass

    # -- transmission helpers ------------------------------------------------

    def control_packet(self, kind: PacketKind, dst: int, ttl: int, payload, **extra) -> Packet:
        return Packet(
            kind=kind,
            src=self.node,
            dst=dst,
            prev_hop=self.node,
            ttl=ttl,
            size_bits=self.sizes.control_bits(kind),
            uid=self.net.next_uid(),
            payload=payload,
            **extra,
        )

    def outgoing(self, packet: Packet, **changes) -> Optional[Packet]:
        """
        The copy this node puts on the air

        A packet this node already prepared (its own origination or a copy it
        forwarded before) leaves unchanged; a received one is forwarded with
        its ttl decremented. None when the ttl is used up.
        """
        if packet.prev_hop == self.node:
            return replace(packet, **changes) if changes else packet
        if not packet.can_forward:
            return None
        return packet.forwarded(self.node, **changes)

    def broadcast(self, packet: Packet) -> None:
        self.net.channel.transmit(self.node, packet, None)

    def unicast(self, packet: Packet, to: int) -> None:
        self.net.channel.transmit(self.node, packet, to)

    def deliver(self, packet: Packet) -> None:
        self.stats.record_delivery(packet, self.sim.now)

    def buffer_data(self, packet: Packet) -> BufferOutcome:
        return self.buffer.add(packet)

    def next_rreq_id(self) -> int:
        self._rreq_ids += 1
        return self._rreq_ids

    def note_rreq_sent(self, rreq_id: int, attempt: int, repair: bool) -> None:
        self.stats.rreq_reach[(self.node, rreq_id)] = [attempt, 0, int(repair)]

    def note_rreq_reached(self, orig: int, rreq_id: int) -> None:
        reach = self.stats.rreq_reach.get((orig, rreq_id))
        if reach is not None:
            reach[1] += 1

    # -- discovery state machine ---------------------------------------------

    def discovering(self, dst: int) -> bool:
        return dst in self.discoveries

    def start_discovery(self, dst: int, repair_ttl: Optional[int] = None) -> None:
        """Begin a ring search for ``dst``; a repair supersedes a plain search already running"""
        repair = repair_ttl is not None
        running = self.discoveries.get(dst)
        if running is not None:
            if running.repair or not repair:
                return
            self.cancel_discovery(dst)
        disc = Discovery(dst=dst, started_at=self.sim.now, repair=repair, repair_ttl=repair_ttl or 0)
        self.discoveries[dst] = disc
        if not repair:
            self.stats.discoveries_started += 1
        self._ring(disc)

    def _ring(self, disc: Discovery) -> None:
        if disc.repair:
            ttl = disc.repair_ttl
            wait_s = self.ers.wait_for(ttl)
        else:
            step = self.ers.next(disc.attempt)
            if step is None:
                self._exhausted(disc)
                return
            ttl, wait_s = step
        self.send_rreq(disc, ttl)
        dst = disc.dst
        disc.timer = self.sim.call_later(
            to_us(wait_s),
            lambda: self._ring_timeout(dst),
            kind=EventKind.TIMER,
            node=self.node,
            detail=f"ring-timeout dst={dst} ttl={ttl}",
        )

    def _ring_timeout(self, dst: int) -> None:
        disc = self.discoveries.get(dst)
        if disc is None:
            return
        if disc.repair:
            del self.discoveries[dst]
            self.repair_failed(dst, disc)
            return
        disc.attempt += 1
        self._ring(disc)

    def _exhausted(self, disc: Discovery) -> None:
        del self.discoveries[disc.dst]
        self.stats.no_route_events += 1
        self.stats.failed_discovery_durations.append(to_s(self.sim.now - disc.started_at))
        dropped = self.buffer.drop_all(disc.dst, "no_route")
        logger.debug(
            f"{self.name} node {self.node}: no route to {disc.dst} after "
            f"{disc.attempt} rings, dropped {dropped}"
        )

    def route_found(self, dst: int) -> None:
        """A usable route to ``dst`` now exists: close any search and flush the buffer"""
        disc = self.discoveries.pop(dst, None)
        if disc is not None:
            if disc.timer is not None:
                disc.timer.cancel()
            elapsed = to_s(self.sim.now - disc.started_at)
            if disc.repair:
                self.stats.repairs_succeeded += 1
                self.stats.repair_durations.append(elapsed)
                logger.debug(f"{self.name} node {self.node}: repaired route to {dst} in {elapsed:.3f}s")
            else:
                self.stats.discoveries_succeeded += 1
                self.stats.discovery_durations.append(elapsed)
        self.flush(dst)

    def cancel_discovery(self, dst: int) -> None:
        disc = self.discoveries.pop(dst, None)
        if disc is not None and disc.timer is not None:
            disc.timer.cancel()

    @abstractmethod
    def send_rreq(self, disc: Discovery, ttl: int) -> None:
        """Put one ring of the search on the air"""

    @abstractmethod
    def flush(self, dst: int) -> None:
        """Send buffered packets for ``dst`` over the route just found"""

    def repair_failed(self, dst: int, disc: Discovery) -> None:
        self.stats.repairs_failed += 1
        self.buffer.drop_all(dst, "repair_failed")


def next_hop_graph(protocols: Sequence["RoutingProtocol"], dst: int) -> nx.DiGraph:
    """Directed graph of every node's current next hop towards ``dst`` (table-driven protocols)"""
    graph = nx.DiGraph()
    graph.add_nodes_from(p.node for p in protocols)
    for protocol in protocols:
        if protocol.node == dst:
            continue
        nxt = protocol.next_hop_walk(dst)
        if nxt is not None:
            graph.add_edge(protocol.node, nxt)
    return graph
