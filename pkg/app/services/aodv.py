import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Set

from app.models.packet import (
    BROADCAST,
    HelloPayload,
    Packet,
    PacketKind,
    RerrPayload,
    RreqPayload,
    RrepPayload,
)
from app.services.engine import EventKind, Event, to_us
from app.services.routing_common import Discovery, RoutingParams, RoutingProtocol

logger = logging.getLogger(__name__)


class RouteState(str, Enum):
    VALID = "valid"
    INVALID = "invalid"
    UNDER_REPAIR = "under_repair"


def is_better_offer(cur_seq: int, cur_hops: int, cur_usable: bool, seq: int, hops: int) -> bool:
    """Sequence-number freshness: newer wins, equal seq wins on fewer hops or over a dead entry"""
    if seq > cur_seq:
        return True
    if seq == cur_seq:
        return hops < cur_hops or not cur_usable
    return False


@dataclass(slots=True)
class AodvRouteEntry:
    dest: int
    dest_seq: int
    hop_count: int
    next_hop: int
    lifetime: int
    precursors: Set[int] = field(default_factory=set)
    state: RouteState = RouteState.VALID
    # data forwarded over the entry keeps it "active" until this instant
    in_use_until: int = 0
    last_source: Optional[int] = None

    def usable(self, now: int) -> bool:
        return self.state is RouteState.VALID and self.lifetime > now


@dataclass
class HelloState:
    interval_s: float = 1.0
    allowed_loss: int = 2
    last_heard: Dict[int, int] = field(default_factory=dict)

    def heard(self, neighbor: int, now: int) -> None:
        self.last_heard[neighbor] = now

    def silent(self, neighbor: int, now: int) -> bool:
        heard = self.last_heard.get(neighbor)
        if heard is None:
            return False
        return now - heard > to_us(self.allowed_loss * self.interval_s)


class HelloBeacon:
    """
    Periodic one-hop HELLO broadcasts, sent only while the node carries active routes

    Every tick also checks the owner's active next hops for silence. The owner
    provides ``monitored_next_hops()`` and ``on_link_broken(neighbor)``.
    """

    def __init__(self, owner: RoutingProtocol, state: HelloState, active_timeout_s: float):
        self.owner = owner
        self.state = state
        self.interval_us = to_us(state.interval_s)
        self.active_timeout_us = to_us(active_timeout_s)
        self.active_until = 0
        self.sent = 0
        self._timer: Optional[Event] = None

    @property
    def running(self) -> bool:
        return self._timer is not None

    def mark_active(self) -> None:
        sim = self.owner.sim
        self.active_until = max(self.active_until, sim.now + self.active_timeout_us)
        if self._timer is None:
            self._timer = sim.call_at(sim.now, self._tick, kind=EventKind.TIMER, node=self.owner.node, detail="hello")

    def _tick(self) -> None:
        owner = self.owner
        now = owner.sim.now
        self._timer = None
        if now >= self.active_until:
            return
        owner.broadcast(owner.control_packet(PacketKind.HELLO, BROADCAST, 1, HelloPayload(seq=owner.seq)))
        self.sent += 1
        owner.stats.route_in_use_s[owner.node] += self.state.interval_s
        for neighbor in owner.monitored_next_hops():
            if self.state.silent(neighbor, now):
                owner.on_link_broken(neighbor)
        self._timer = owner.sim.call_later(
            self.interval_us, self._tick, kind=EventKind.TIMER, node=owner.node, detail="hello"
        )


class AodvProtocol(RoutingProtocol):
    """
    AODV node: sequence-numbered next-hop table with precursor lists

    What this does: expanding ring discovery, gratuitous replies from fresh
    intermediate routes, HELLO link monitoring, local repair by nodes nearer
    the destination than the source, and RERR along precursor lists
    Why: the reference table-driven reactive protocol
    How: AodvLlProtocol flips ``link_layer``; HELLOs stop and breaks come from
    the beacon monitor and from unicast transmit failures instead
    """

    name = "aodv"
    link_layer = False
    grat_replies = True

    def __init__(self, node: int, network, params: RoutingParams):
        super().__init__(node, network, params)
        self.table: Dict[int, AodvRouteEntry] = {}
        self.lifetime_us = to_us(params.aodv_route_lifetime_s)
        self.hello = HelloState(params.hello_interval_s, params.allowed_hello_loss)
        self.beacon = None if self.link_layer else HelloBeacon(self, self.hello, params.aodv_route_lifetime_s)
        self._rerr_ids = 0

    # -- table ---------------------------------------------------------------

    def usable_route(self, dst: int) -> Optional[AodvRouteEntry]:
        entry = self.table.get(dst)
        if entry is not None and entry.usable(self.sim.now):
            return entry
        return None

    def update_route(self, dest: int, seq: int, hops: int, next_hop: int) -> bool:
        now = self.sim.now
        expiry = now + self.lifetime_us
        entry = self.table.get(dest)
        if entry is None:
            self.table[dest] = AodvRouteEntry(dest, seq, hops, next_hop, expiry)
            return True
        if not is_better_offer(entry.dest_seq, entry.hop_count, entry.usable(now), seq, hops):
            if entry.usable(now) and entry.next_hop == next_hop and seq == entry.dest_seq:
                entry.lifetime = max(entry.lifetime, expiry)
            return False
        same_path = entry.next_hop == next_hop and entry.state is RouteState.VALID
        entry.dest_seq = seq
        entry.hop_count = hops
        entry.next_hop = next_hop
        entry.state = RouteState.VALID
        entry.lifetime = max(entry.lifetime, expiry) if same_path else expiry
        return True

    def invalidate(self, entry: AodvRouteEntry) -> None:
        entry.state = RouteState.INVALID
        entry.dest_seq += 1

    def monitored_next_hops(self) -> List[int]:
        now = self.sim.now
        return sorted(
            {
                e.next_hop
                for e in self.table.values()
                if e.state is RouteState.VALID and e.in_use_until > now
            }
        )

    def next_hop_walk(self, dst: int) -> Optional[int]:
        entry = self.usable_route(dst)
        return entry.next_hop if entry is not None else None

    # -- activity ------------------------------------------------------------

    def mark_active(self) -> None:
        if self.beacon is not None:
            self.beacon.mark_active()

    def heard_from(self, neighbor: int) -> None:
        self.hello.heard(neighbor, self.sim.now)

    def watch_next_hop(self, neighbor: int, until_us: int) -> None:
        if self.link_layer:
            self.net.monitor.watch(self.node, neighbor, self.on_link_broken, until_us)
        else:
            self.hello.last_heard.setdefault(neighbor, self.sim.now)

    # -- data ----------------------------------------------------------------

    def send_data(self, packet: Packet) -> None:
        self.mark_active()
        entry = self.usable_route(packet.dst)
        if entry is not None:
            self.forward_data(packet, entry)
            return
        self.buffer_data(packet)
        self.start_discovery(packet.dst)

    def forward_data(self, packet: Packet, entry: AodvRouteEntry) -> None:
        out = self.outgoing(packet)
        if out is None:
            self.stats.drop_data(packet, "ttl_expired")
            return
        now = self.sim.now
        entry.lifetime = max(entry.lifetime, now + self.lifetime_us)
        entry.in_use_until = now + self.lifetime_us
        entry.last_source = packet.src
        reverse = self.usable_route(packet.src)
        if reverse is not None:
            reverse.lifetime = max(reverse.lifetime, now + self.lifetime_us)
        self.watch_next_hop(entry.next_hop, entry.in_use_until)
        self.unicast(out, entry.next_hop)

    def handle_data(self, packet: Packet, sender: int) -> None:
        self.mark_active()
        if packet.dst == self.node:
            self.deliver(packet)
            return
        entry = self.table.get(packet.dst)
        if entry is not None and entry.usable(self.sim.now):
            entry.precursors.add(sender)
            self.forward_data(packet, entry)
            return
        if entry is not None and entry.state is RouteState.UNDER_REPAIR:
            self.buffer_data(packet)
            return
        self.stats.drop_data(packet, "no_route")
        self.send_rerr({packet.dst: entry.dest_seq if entry else 0}, {sender})

    def flush(self, dst: int) -> None:
        entry = self.usable_route(dst)
        for packet in self.buffer.drain(dst):
            if entry is None:
                self.stats.drop_data(packet, "no_route")
            else:
                self.forward_data(packet, entry)

    # -- discovery -----------------------------------------------------------

    def send_rreq(self, disc: Discovery, ttl: int) -> None:
        self.seq += 1
        rreq_id = self.next_rreq_id()
        known = self.table.get(disc.dst)
        payload = RreqPayload(
            rreq_id=rreq_id,
            orig=self.node,
            target=disc.dst,
            orig_seq=self.seq,
            dst_seq=known.dest_seq if known is not None else 0,
            repair=disc.repair,
        )
        self.seen.first_time(self.node, rreq_id, self.sim.now)
        self.note_rreq_sent(rreq_id, disc.attempt, disc.repair)
        self.broadcast(self.control_packet(PacketKind.RREQ, BROADCAST, ttl, payload))

    def handle_rreq(self, packet: Packet, sender: int) -> None:
        p: RreqPayload = packet.payload
        if p.orig == self.node or not self.seen.first_time(p.orig, p.rreq_id, self.sim.now):
            return
        self.note_rreq_reached(p.orig, p.rreq_id)
        hops = p.hop_count + 1
        self.update_route(p.orig, p.orig_seq, hops, sender)
        reverse = self.usable_route(p.orig)

        if p.target == self.node:
            self.seq = max(self.seq + 1, p.dst_seq)
            self.send_rrep(reverse, RrepPayload(orig=p.orig, target=self.node, dst_seq=self.seq))
            return

        if self.grat_replies and reverse is not None:
            entry = self.usable_route(p.target)
            if (
                entry is not None
                and entry.next_hop != sender
                and (p.dst_seq == 0 or entry.dest_seq >= p.dst_seq)
            ):
                entry.precursors.add(reverse.next_hop)
                reverse.precursors.add(entry.next_hop)
                self.send_rrep(
                    reverse,
                    RrepPayload(
                        orig=p.orig,
                        target=p.target,
                        dst_seq=entry.dest_seq,
                        hop_count=entry.hop_count,
                        gratuitous=True,
                    ),
                )
                return

        if packet.can_forward:
            self.broadcast(packet.forwarded(self.node, payload=replace(p, hop_count=hops)))

    def send_rrep(self, reverse: Optional[AodvRouteEntry], payload: RrepPayload) -> None:
        if reverse is None:
            return
        packet = self.control_packet(PacketKind.RREP, payload.orig, self.ers.net_diameter, payload)
        self.unicast(packet, reverse.next_hop)

    def handle_rrep(self, packet: Packet, sender: int) -> None:
        p: RrepPayload = packet.payload
        updated = self.update_route(p.target, p.dst_seq, p.hop_count + 1, sender)
        entry = self.table[p.target]
        if p.orig == self.node:
            if entry.usable(self.sim.now):
                self.route_found(p.target)
            return
        if not updated:
            return
        reverse = self.usable_route(p.orig)
        if reverse is None or not packet.can_forward:
            return
        entry.precursors.add(reverse.next_hop)
        reverse.precursors.add(entry.next_hop)
        forwarded = packet.forwarded(self.node, payload=replace(p, hop_count=p.hop_count + 1))
        self.unicast(forwarded, reverse.next_hop)

    # -- maintenance ---------------------------------------------------------

    def on_link_broken(self, neighbor: int) -> None:
        self.hello.last_heard.pop(neighbor, None)
        if self.link_layer:
            self.net.monitor.unwatch(self.node, neighbor)
        affected = sorted(
            (e for e in self.table.values() if e.next_hop == neighbor and e.state is RouteState.VALID),
            key=lambda e: e.dest,
        )
        if not affected:
            return
        self.stats.links_declared_broken += 1
        unreachable: Dict[int, int] = {}
        precursors: Set[int] = set()
        for entry in affected:
            if self.repair_eligible(entry):
                self.local_repair(neighbor, entry.dest)
                continue
            self.invalidate(entry)
            unreachable[entry.dest] = entry.dest_seq
            precursors |= entry.precursors
        self.send_rerr(unreachable, precursors)

    def repair_eligible(self, entry: AodvRouteEntry) -> bool:
        """Only a relay nearer the destination than the flow's source repairs locally"""
        if entry.in_use_until <= self.sim.now:
            return False
        if entry.last_source is None or entry.last_source == self.node:
            return False
        to_source = self.table.get(entry.last_source)
        if to_source is None:
            return False
        return entry.hop_count < to_source.hop_count

    def local_repair(self, broken_next_hop: int, dest: int) -> None:
        entry = self.table[dest]
        running = self.discoveries.get(dest)
        if running is not None and running.repair:
            return
        entry.state = RouteState.UNDER_REPAIR
        entry.dest_seq += 1
        self.stats.repairs_attempted += 1
        self.stats.record_repair_response(self.sim.now)
        ttl = max(self.params.repair_min_ttl, entry.hop_count) + self.params.repair_add_ttl
        logger.debug(
            f"{self.name} node {self.node}: link to {broken_next_hop} lost, repairing route to {dest} (ttl {ttl})"
        )
        self.start_discovery(dest, repair_ttl=ttl)

    def repair_failed(self, dst: int, disc: Discovery) -> None:
        self.stats.repairs_failed += 1
        self.buffer.drop_all(dst, "repair_failed")
        entry = self.table.get(dst)
        if entry is None:
            return
        entry.state = RouteState.INVALID
        logger.debug(f"{self.name} node {self.node}: repair to {dst} failed, sending RERR")
        self.send_rerr({dst: entry.dest_seq}, entry.precursors)

    def send_rerr(self, unreachable: Dict[int, int], precursors: Set[int]) -> None:
        targets = sorted(precursors - {self.node})
        if not unreachable or not targets:
            return
        self.stats.rerr_originations += 1
        self._rerr_ids += 1
        payload = RerrPayload(
            unreachable=tuple(sorted(unreachable.items())), orig=self.node, rerr_id=self._rerr_ids
        )
        if len(targets) == 1:
            self.unicast(self.control_packet(PacketKind.RERR, targets[0], 1, payload), targets[0])
        else:
            self.broadcast(self.control_packet(PacketKind.RERR, BROADCAST, 1, payload))

    def handle_rerr(self, packet: Packet, sender: int) -> None:
        self.stats.rerr_receivers += 1
        p: RerrPayload = packet.payload
        unreachable: Dict[int, int] = {}
        precursors: Set[int] = set()
        for dest, seq in p.unreachable:
            entry = self.table.get(dest)
            if entry is None or entry.next_hop != sender or entry.state is not RouteState.VALID:
                continue
            entry.state = RouteState.INVALID
            entry.dest_seq = max(entry.dest_seq, seq)
            unreachable[dest] = entry.dest_seq
            precursors |= entry.precursors
        self.send_rerr(unreachable, precursors)

    def on_tx_failed(self, packet: Packet, next_hop: int) -> None:
        if not self.link_layer:
            super().on_tx_failed(packet, next_hop)
            return
        self.on_link_broken(next_hop)
        if packet.kind is not PacketKind.DATA:
            return
        entry = self.table.get(packet.dst)
        if entry is not None and entry.state is RouteState.UNDER_REPAIR:
            self.buffer_data(packet)
        elif entry is not None and entry.usable(self.sim.now):
            self.forward_data(packet, entry)
        elif packet.src == self.node:
            self.buffer_data(packet)
            self.start_discovery(packet.dst)
        else:
            self.stats.drop_data(packet, "link_failure")


class AodvLlProtocol(AodvProtocol):
    """AODV with link-layer break detection (beacon monitor and transmit failures) instead of HELLO"""

    name = "aodv-ll"
    link_layer = True
