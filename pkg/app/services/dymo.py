import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional

from app.models.packet import BROADCAST, Packet, PacketKind, RerrPayload, RreqPayload, RrepPayload
from app.services.aodv import HelloBeacon, HelloState, is_better_offer
from app.services.engine import to_us
from app.services.routing_common import Discovery, RoutingParams, RoutingProtocol, RreqSeen

logger = logging.getLogger(__name__)


@dataclass(slots=True)
class DymoRouteEntry:
    dest: int
    seq: int
    hop_count: int
    next_hop: int
    lifetime: int
    valid: bool = True
    in_use_until: int = 0

    def usable(self, now: int) -> bool:
        return self.valid and self.lifetime > now


class DymoProtocol(RoutingProtocol):
    """
    DYMO node: plain expanding ring search, destination-only replies

    Intermediate nodes learn routes to both ends from passing RREQ/RREP but
    never answer for the destination. Breaks are found by HELLO loss and
    announced with a small RERR flood; nobody repairs, the source searches
    again on its next packet.
    """

    name = "dymo"

    def __init__(self, node: int, network, params: RoutingParams):
        super().__init__(node, network, params)
        self.table: Dict[int, DymoRouteEntry] = {}
        self.lifetime_us = to_us(params.dymo_route_lifetime_s)
        self.hello = HelloState(params.hello_interval_s, params.allowed_hello_loss)
        self.beacon = HelloBeacon(self, self.hello, params.dymo_route_lifetime_s)
        self.rerr_seen = RreqSeen(params.rreq_seen_horizon_s)
        self._rerr_ids = 0

    # -- table ---------------------------------------------------------------

    def usable_route(self, dst: int) -> Optional[DymoRouteEntry]:
        entry = self.table.get(dst)
        if entry is not None and entry.usable(self.sim.now):
            return entry
        return None

    def update_route(self, dest: int, seq: int, hops: int, next_hop: int) -> bool:
        now = self.sim.now
        entry = self.table.get(dest)
        if entry is None:
            self.table[dest] = DymoRouteEntry(dest, seq, hops, next_hop, now + self.lifetime_us)
            return True
        if not is_better_offer(entry.seq, entry.hop_count, entry.usable(now), seq, hops):
            return False
        entry.seq = seq
        entry.hop_count = hops
        entry.next_hop = next_hop
        entry.valid = True
        entry.lifetime = now + self.lifetime_us
        return True

    def monitored_next_hops(self) -> List[int]:
        now = self.sim.now
        return sorted({e.next_hop for e in self.table.values() if e.valid and e.in_use_until > now})

    def next_hop_walk(self, dst: int) -> Optional[int]:
        entry = self.usable_route(dst)
        return entry.next_hop if entry is not None else None

    def heard_from(self, neighbor: int) -> None:
        self.hello.heard(neighbor, self.sim.now)

    # -- data ----------------------------------------------------------------

    def send_data(self, packet: Packet) -> None:
        self.beacon.mark_active()
        entry = self.usable_route(packet.dst)
        if entry is not None:
            self.forward_data(packet, entry)
            return
        self.buffer_data(packet)
        self.start_discovery(packet.dst)

    def forward_data(self, packet: Packet, entry: DymoRouteEntry) -> None:
        out = self.outgoing(packet)
        if out is None:
            self.stats.drop_data(packet, "ttl_expired")
            return
        now = self.sim.now
        entry.lifetime = max(entry.lifetime, now + self.lifetime_us)
        entry.in_use_until = now + self.lifetime_us
        self.hello.last_heard.setdefault(entry.next_hop, now)
        self.unicast(out, entry.next_hop)

    def handle_data(self, packet: Packet, sender: int) -> None:
        self.beacon.mark_active()
        if packet.dst == self.node:
            self.deliver(packet)
            return
        entry = self.usable_route(packet.dst)
        if entry is None:
            self.stats.drop_data(packet, "no_route")
            known = self.table.get(packet.dst)
            self.flood_rerr({packet.dst: known.seq if known else 0})
            return
        self.forward_data(packet, entry)

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
            dst_seq=known.seq if known is not None else 0,
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
        if p.target == self.node:
            reverse = self.usable_route(p.orig)
            if reverse is None:
                return
            self.seq = max(self.seq + 1, p.dst_seq)
            reply = RrepPayload(orig=p.orig, target=self.node, dst_seq=self.seq)
            self.unicast(
                self.control_packet(PacketKind.RREP, p.orig, self.ers.net_diameter, reply), reverse.next_hop
            )
            return
        if packet.can_forward:
            self.broadcast(packet.forwarded(self.node, payload=replace(p, hop_count=hops)))

    def handle_rrep(self, packet: Packet, sender: int) -> None:
        p: RrepPayload = packet.payload
        updated = self.update_route(p.target, p.dst_seq, p.hop_count + 1, sender)
        if p.orig == self.node:
            if self.usable_route(p.target) is not None:
                self.route_found(p.target)
            return
        reverse = self.usable_route(p.orig)
        if not updated or reverse is None or not packet.can_forward:
            return
        self.unicast(packet.forwarded(self.node, payload=replace(p, hop_count=p.hop_count + 1)), reverse.next_hop)

    # -- maintenance ---------------------------------------------------------

    def on_link_broken(self, neighbor: int) -> None:
        self.hello.last_heard.pop(neighbor, None)
        unreachable = {}
        for entry in sorted(self.table.values(), key=lambda e: e.dest):
            if entry.valid and entry.next_hop == neighbor:
                entry.valid = False
                entry.seq += 1
                unreachable[entry.dest] = entry.seq
        if not unreachable:
            return
        self.stats.links_declared_broken += 1
        self.flood_rerr(unreachable)

    def flood_rerr(self, unreachable: Dict[int, int]) -> None:
        self._rerr_ids += 1
        self.stats.rerr_originations += 1
        self.rerr_seen.first_time(self.node, self._rerr_ids, self.sim.now)
        payload = RerrPayload(
            unreachable=tuple(sorted(unreachable.items())), orig=self.node, rerr_id=self._rerr_ids
        )
        self.broadcast(self.control_packet(PacketKind.RERR, BROADCAST, self.params.dymo_rerr_ttl, payload))

    def handle_rerr(self, packet: Packet, sender: int) -> None:
        p: RerrPayload = packet.payload
        if not self.rerr_seen.first_time(p.orig, p.rerr_id, self.sim.now):
            return
        self.stats.rerr_receivers += 1
        for dest, seq in p.unreachable:
            entry = self.table.get(dest)
            if entry is not None and entry.valid and entry.next_hop == sender:
                entry.valid = False
                entry.seq = max(entry.seq, seq)
        if packet.can_forward:
            self.broadcast(packet.forwarded(self.node))
