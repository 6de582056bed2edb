import heapq
import itertools
import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Deque, Dict, Iterator, List, Optional, Set, Tuple

import numpy as np

from app.models.packet import BROADCAST, DataPayload, Packet, PacketKind, PacketSizes
from app.models.trace import TraceStats
from app.services.mobility import LinkChange, LinkChangeKind, LinkScanner
from app.utils.event_log import EventLog
from app.utils.exceptions import BandwidthViolation, SchedulingError

logger = logging.getLogger(__name__)

US_PER_S = 1_000_000


def to_us(seconds: float) -> int:
    """Seconds to integer simulation microseconds"""
    return int(round(seconds * US_PER_S))


def to_s(us: int) -> float:
    return us / US_PER_S


class EventKind(str, Enum):
    PACKET_ARRIVAL = "packet-arrival"
    TX_DONE = "tx-done"
    TX_FAILED = "tx-failed"
    TIMER = "timer"
    MOBILITY_UPDATE = "mobility-update"
    TRAFFIC = "traffic-generation"


@dataclass(slots=True)
class Event:
    fire_at: int
    seq: int
    kind: EventKind
    action: Callable[[], None]
    node: int = -1
    packet: Optional[Packet] = None
    detail: str = ""
    promiscuous: bool = False
    cancelled: bool = False

    def cancel(self) -> None:
        self.cancelled = True


class Simulator:
    """
    Discrete-event clock and queue

    Events dequeue in (fire_at, seq) order; ``seq`` is a monotone counter so
    ties resolve in scheduling order and identical inputs replay identically.
    Events past the horizon stay queued but never fire.
    """

    def __init__(self, horizon_us: int, event_log: Optional[EventLog] = None):
        self.now = 0
        self.horizon = horizon_us
        self.event_log = event_log
        self.dispatched = 0
        self._queue: List[Tuple[int, int, Event]] = []
        self._seq = itertools.count()

    def next_seq(self) -> int:
        return next(self._seq)

    def schedule(self, event: Event) -> Event:
        if event.fire_at < self.now:
            raise SchedulingError(
                f"event {event.kind.value} at {event.fire_at}us is before clock {self.now}us"
            )
        heapq.heappush(self._queue, (event.fire_at, event.seq, event))
        return event

    def call_at(
        self,
        fire_at: int,
        action: Callable[[], None],
        kind: EventKind = EventKind.TIMER,
        node: int = -1,
        packet: Optional[Packet] = None,
        detail: str = "",
        promiscuous: bool = False,
    ) -> Event:
        return self.schedule(
            Event(fire_at, self.next_seq(), kind, action, node, packet, detail, promiscuous)
        )

    def call_later(self, delay_us: int, action: Callable[[], None], **kwargs) -> Event:
        return self.call_at(self.now + delay_us, action, **kwargs)

    def pending(self) -> Iterator[Event]:
        return (event for _, _, event in self._queue if not event.cancelled)

    def run(self, until_us: Optional[int] = None) -> None:
        limit = self.horizon if until_us is None else min(until_us, self.horizon)
        queue = self._queue
        while queue and queue[0][0] <= limit:
            fire_at, _, event = heapq.heappop(queue)
            if event.cancelled:
                continue
            self.now = fire_at
            self.dispatched += 1
            if self.event_log is not None:
                self.event_log.write(fire_at, event.node, event.kind.value, event.packet, event.detail)
            event.action()
        self.now = max(self.now, limit)


@dataclass(slots=True)
class NodeRadio:
    node: int
    bandwidth_bps: int = 2_000_000
    range_m: float = 250.0
    tx_queue: Deque[Tuple[Packet, Optional[int]]] = field(default_factory=deque)
    busy_until: int = 0
    current: Optional[Tuple[Packet, Optional[int]]] = None
    # (start_us, bits) of transmissions started in the last second
    window: Deque[Tuple[int, int]] = field(default_factory=deque)
    window_bits: int = 0
    deferred: Optional[Event] = None


class Channel:
    """
    Unit-disk wireless channel with an idealised FIFO MAC

    What this does: serialises each node's transmissions, applies airtime,
    delivers to neighbours, reports unicast failures to the sender and hands
    promiscuous copies to listening neighbours
    Why: routing protocols only need airtime, a bandwidth budget and
    link-layer feedback, not 802.11 contention
    How: one NodeRadio per node; a start is deferred when the per-node
    sliding one-second budget would be exceeded
    """

    def __init__(
        self,
        sim: Simulator,
        mobility,
        stats: TraceStats,
        rng: np.random.Generator,
        range_m: float = 250.0,
        bandwidth_bps: int = 2_000_000,
        jitter_max_us: int = 10_000,
        ifq_capacity: int = 50,
    ):
        self.sim = sim
        self.mobility = mobility
        self.stats = stats
        self.rng = rng
        self.range_m = range_m
        self.bandwidth_bps = bandwidth_bps
        self.jitter_max_us = jitter_max_us
        self.ifq_capacity = ifq_capacity
        self.radios = [
            NodeRadio(node=i, bandwidth_bps=bandwidth_bps, range_m=range_m)
            for i in range(mobility.nodes)
        ]
        self.receivers: List = []
        self.ifq_drops = 0
        self._cache_t: Optional[int] = None
        self._cache_pos: Optional[np.ndarray] = None

    # -- geometry ------------------------------------------------------------

    def invalidate_positions(self) -> None:
        self._cache_t = None

    def positions(self, at: Optional[int] = None) -> np.ndarray:
        t = self.sim.now if at is None else at
        if t != self._cache_t:
            self._cache_pos = self.mobility.positions(t / US_PER_S)
            self._cache_t = t
        return self._cache_pos

    def neighbors(self, node: int, at: Optional[int] = None) -> List[int]:
        """Nodes within range of ``node`` (boundary inclusive), ascending"""
        pos = self.positions(at)
        distance = np.hypot(pos[:, 0] - pos[node, 0], pos[:, 1] - pos[node, 1])
        mask = distance <= self.range_m
        mask[node] = False
        return np.flatnonzero(mask).tolist()

    def in_range(self, a: int, b: int, at: Optional[int] = None) -> bool:
        pos = self.positions(at)
        return bool(np.hypot(*(pos[a] - pos[b])) <= self.range_m)

    # -- MAC -----------------------------------------------------------------

    def airtime_us(self, size_bits: int) -> int:
        return -(-size_bits * US_PER_S // self.bandwidth_bps)

    def transmit(self, sender: int, packet: Packet, to: Optional[int] = None) -> None:
        if packet.size_bits <= 0:
            raise ValueError("packet size must be positive")
        if packet.size_bits > self.bandwidth_bps:
            raise ValueError("packet larger than one second of channel capacity")
        if to is None or to == BROADCAST:
            jitter = int(self.rng.integers(0, self.jitter_max_us + 1))
            self.sim.call_later(
                jitter,
                lambda: self._enqueue(sender, packet, None),
                kind=EventKind.TIMER,
                node=sender,
                packet=packet,
                detail="jitter",
            )
        else:
            self._enqueue(sender, packet, to)

    def _enqueue(self, sender: int, packet: Packet, to: Optional[int]) -> None:
        radio = self.radios[sender]
        if len(radio.tx_queue) >= self.ifq_capacity:
            self.ifq_drops += 1
            if packet.kind is PacketKind.DATA:
                self.stats.drop_data(packet, "ifq_overflow")
            return
        radio.tx_queue.append((packet, to))
        if radio.current is None and radio.deferred is None:
            self._start_next(radio)

    def _budget_release_time(self, radio: NodeRadio, bits: int) -> int:
        now = self.sim.now
        window = radio.window
        while window and window[0][0] <= now - US_PER_S:
            radio.window_bits -= window.popleft()[1]
        excess = radio.window_bits + bits - radio.bandwidth_bps
        if excess <= 0:
            return now
        freed = 0
        for start, size in window:
            freed += size
            if freed >= excess:
                return start + US_PER_S
        return now + US_PER_S

    def _start_next(self, radio: NodeRadio) -> None:
        radio.deferred = None
        if radio.current is not None or not radio.tx_queue:
            return
        packet, to = radio.tx_queue[0]
        now = self.sim.now
        release = self._budget_release_time(radio, packet.size_bits)
        if release > now:
            radio.deferred = self.sim.call_at(
                release,
                lambda: self._start_next(radio),
                node=radio.node,
                detail="bandwidth-defer",
            )
            return
        radio.tx_queue.popleft()
        radio.current = (packet, to)
        radio.busy_until = now + self.airtime_us(packet.size_bits)
        radio.window.append((now, packet.size_bits))
        radio.window_bits += packet.size_bits
        if radio.window_bits > radio.bandwidth_bps:
            raise BandwidthViolation(f"node {radio.node} exceeded its budget at {now}us")
        self.stats.record_tx(radio.node, now, packet)
        self.sim.call_at(
            radio.busy_until,
            lambda: self._tx_done(radio),
            kind=EventKind.TX_DONE,
            node=radio.node,
            packet=packet,
            detail="broadcast" if to is None else f"to={to}",
        )

    def _tx_done(self, radio: NodeRadio) -> None:
        packet, to = radio.current
        radio.current = None
        sender = radio.node
        neighbors = self.neighbors(sender)
        if to is None:
            for n in neighbors:
                self._schedule_arrival(n, packet, sender, promiscuous=False)
        elif to in neighbors:
            self._schedule_arrival(to, packet, sender, promiscuous=False)
            for n in neighbors:
                if n != to and self.receivers[n].promiscuous:
                    self._schedule_arrival(n, packet, sender, promiscuous=True)
        else:
            receiver = self.receivers[sender]
            self.sim.call_at(
                self.sim.now,
                lambda: receiver.on_tx_failed(packet, to),
                kind=EventKind.TX_FAILED,
                node=sender,
                packet=packet,
                detail=f"to={to}",
            )
        self._start_next(radio)

    def _schedule_arrival(self, node: int, packet: Packet, sender: int, promiscuous: bool) -> None:
        receiver = self.receivers[node]
        if promiscuous:
            action = lambda: receiver.overhear(packet, sender)  # noqa: E731
        else:
            action = lambda: receiver.receive(packet, sender)  # noqa: E731
        self.sim.call_at(
            self.sim.now,
            action,
            kind=EventKind.PACKET_ARRIVAL,
            node=node,
            packet=packet,
            detail=f"from={sender}" + (",promiscuous" if promiscuous else ""),
            promiscuous=promiscuous,
        )


class LinkLayerMonitor:
    """
    Link-layer beacon monitoring for watched (node, neighbour) pairs

    Beacons are checked every ``period_us``; ``threshold`` consecutive failed
    checks declare the link broken. Checks that would succeed are skipped: a
    pair is only polled once the channel has seen its link go down, and a
    single successful poll resets the counter and stops polling. A pair
    watched with ``until_us`` lapses at that time and is dropped instead of
    polled.
    """

    def __init__(self, sim: Simulator, channel: Channel, period_us: int = 10_000, threshold: int = 8):
        self.sim = sim
        self.channel = channel
        self.period_us = period_us
        self.threshold = threshold
        self._watched: Dict[Tuple[int, int], Callable[[int], None]] = {}
        self._failures: Dict[Tuple[int, int], int] = {}
        self._polling: Set[Tuple[int, int]] = set()
        self._until: Dict[Tuple[int, int], int] = {}
        self.detections: List[Tuple[int, int, int]] = []

    def watch(
        self, node: int, neighbor: int, on_broken: Callable[[int], None], until_us: Optional[int] = None
    ) -> None:
        key = (node, neighbor)
        indefinite = key in self._watched and key not in self._until
        if until_us is None:
            self._until.pop(key, None)
        elif not indefinite:
            self._until[key] = max(until_us, self._until.get(key, until_us))
        if key in self._watched:
            return
        self._watched[key] = on_broken
        if not self.channel.in_range(node, neighbor):
            self._begin(key)

    def unwatch(self, node: int, neighbor: int) -> None:
        key = (node, neighbor)
        self._watched.pop(key, None)
        self._failures.pop(key, None)
        self._until.pop(key, None)

    def watching(self, node: int, neighbor: int) -> bool:
        key = (node, neighbor)
        return key in self._watched and not self._lapsed(key)

    def _lapsed(self, key: Tuple[int, int]) -> bool:
        until = self._until.get(key)
        return until is not None and self.sim.now >= until

    def on_link_change(self, change: LinkChange) -> None:
        if change.kind is not LinkChangeKind.BROKEN:
            return
        for key in ((change.a, change.b), (change.b, change.a)):
            if key not in self._watched:
                continue
            if self._lapsed(key):
                self.unwatch(*key)
                continue
            self._begin(key)

    def _begin(self, key: Tuple[int, int]) -> None:
        if key in self._polling:
            return
        self._polling.add(key)
        self._failures[key] = 0
        first = (self.sim.now // self.period_us + 1) * self.period_us
        self.sim.call_at(first, lambda: self._poll(key), node=key[0], detail=f"beacon->{key[1]}")

    def _poll(self, key: Tuple[int, int]) -> None:
        if key not in self._watched or self._lapsed(key):
            self.unwatch(*key)
            self._polling.discard(key)
            return
        node, neighbor = key
        if self.channel.in_range(node, neighbor):
            self._failures[key] = 0
            self._polling.discard(key)
            return
        self._failures[key] += 1
        if self._failures[key] < self.threshold:
            self.sim.call_later(
                self.period_us, lambda: self._poll(key), node=node, detail=f"beacon->{neighbor}"
            )
            return
        on_broken = self._watched[key]
        self.unwatch(*key)
        self._polling.discard(key)
        self.detections.append((self.sim.now, node, neighbor))
        logger.debug(f"LL monitor: {node}->{neighbor} broken at {self.sim.now}us")
        on_broken(neighbor)


class Network:
    """
    Everything one simulation run owns

    What this does: ties clock, mobility, channel, beacon monitor, traces and
    the per-node protocol instances together, drives periodic link scans and
    CBR traffic
    Why: a run must have no shared mutable state with any other run
    How: built by the harness from a Scenario; protocols reach the rest of the
    run through this object
    """

    def __init__(
        self,
        sim: Simulator,
        mobility,
        channel: Channel,
        stats: TraceStats,
        scan_interval_us: int = 100_000,
        sizes: PacketSizes = PacketSizes(),
        net_diameter: int = 35,
        beacon_period_us: int = 10_000,
        beacon_failures: int = 8,
    ):
        self.sim = sim
        self.mobility = mobility
        self.channel = channel
        self.stats = stats
        self.sizes = sizes
        self.net_diameter = net_diameter
        self.scan_interval_us = scan_interval_us
        self.scanner = LinkScanner(channel.range_m)
        self.monitor = LinkLayerMonitor(sim, channel, beacon_period_us, beacon_failures)
        self.protocols: List = []
        self.link_changes: List[LinkChange] = []
        self._uids = itertools.count(1)

    @property
    def nodes(self) -> int:
        return len(self.channel.radios)

    def next_uid(self) -> int:
        return next(self._uids)

    def attach(self, protocols: List) -> None:
        if len(protocols) != self.nodes:
            raise ValueError("one protocol instance per node is required")
        self.protocols = protocols
        self.channel.receivers = protocols

    def start(self) -> None:
        self.sim.call_at(self.sim.now, self._periodic_scan, kind=EventKind.MOBILITY_UPDATE, detail="link-scan")

    def _periodic_scan(self) -> None:
        self.scan_links()
        nxt = self.sim.now + self.scan_interval_us
        if nxt <= self.sim.horizon:
            self.sim.call_at(nxt, self._periodic_scan, kind=EventKind.MOBILITY_UPDATE, detail="link-scan")

    def scan_links(self) -> List[LinkChange]:
        changes = self.scanner.scan(self.channel.positions(), self.sim.now)
        self.stats.degree_samples.append(self.scanner.last_mean_degree)
        for change in changes:
            self.stats.link_changes += 1
            if change.kind is LinkChangeKind.BROKEN:
                self.stats.link_breaks += 1
            self.link_changes.append(change)
            self.monitor.on_link_change(change)
        return changes

    def move_node(self, node: int, x: float, y: float) -> None:
        """Scripted relocation of a node (static placements only); links are rescanned immediately"""
        self.mobility.place(node, x, y)
        self.channel.invalidate_positions()
        self.scan_links()

    def add_cbr_flow(
        self,
        flow_id: int,
        src: int,
        dst: int,
        pps: float,
        payload_bytes: int = 512,
        start_us: int = 0,
        stop_us: Optional[int] = None,
    ) -> None:
        interval = max(1, int(round(US_PER_S / pps)))
        stop = self.sim.horizon if stop_us is None else stop_us
        size_bits = self.sizes.data_bits(payload_bytes)

        def emit():
            packet = Packet(
                kind=PacketKind.DATA,
                src=src,
                dst=dst,
                prev_hop=src,
                ttl=self.net_diameter,
                size_bits=size_bits,
                uid=self.next_uid(),
                payload=DataPayload(flow_id=flow_id, payload_bits=payload_bytes * 8),
                created_at=self.sim.now,
            )
            self.stats.data_originated += 1
            self.protocols[src].send_data(packet)
            nxt = self.sim.now + interval
            if nxt <= stop:
                self.sim.call_at(nxt, emit, kind=EventKind.TRAFFIC, node=src, detail=f"flow={flow_id}")

        self.sim.call_at(start_us, emit, kind=EventKind.TRAFFIC, node=src, detail=f"flow={flow_id}")

    def count_data_in_flight(self) -> int:
        """DATA packets still held anywhere: interface queues, radios, pending deliveries, buffers"""
        held = 0
        for radio in self.channel.radios:
            if radio.current is not None and radio.current[0].kind is PacketKind.DATA:
                held += 1
            held += sum(1 for packet, _ in radio.tx_queue if packet.kind is PacketKind.DATA)
        for event in self.sim.pending():
            if (
                event.kind in (EventKind.PACKET_ARRIVAL, EventKind.TX_FAILED)
                and not event.promiscuous
                and event.packet is not None
                and event.packet.kind is PacketKind.DATA
            ):
                held += 1
        held += sum(protocol.buffered_data() for protocol in self.protocols)
        return held
