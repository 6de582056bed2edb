import logging
from collections import OrderedDict
from dataclasses import replace
from typing import List, Optional, Sequence, Tuple

from app.models.packet import (
    BROADCAST,
    Packet,
    PacketKind,
    RerrPayload,
    RreqPayload,
    RrepPayload,
    SourceRouteHeader,
)
from app.services.routing_common import Discovery, RoutingParams, RoutingProtocol

logger = logging.getLogger(__name__)

Path = Tuple[int, ...]


class RouteCache:
    """
    Capacity-bounded store of full source routes from one node

    Paths never expire; they leave only through link pruning or FIFO eviction
    when the cache is full. Lookup returns the shortest stored route to a target,
    including prefixes of longer stored paths.
    """

    def __init__(self, owner: int, capacity: int, stats=None):
        if capacity < 1:
            raise ValueError("cache capacity must be at least one path")
        self.owner = owner
        self.capacity = capacity
        self.stats = stats
        self.evictions = 0
        # insertion order is eviction order; value is added_at (us)
        self._paths: "OrderedDict[Path, int]" = OrderedDict()

    def __len__(self) -> int:
        return len(self._paths)

    def __contains__(self, path: Sequence[int]) -> bool:
        return tuple(path) in self._paths

    def paths(self) -> List[Path]:
        return list(self._paths)

    def add(self, path: Sequence[int], now: int) -> bool:
        path = tuple(path)
        if len(path) < 2 or path[0] != self.owner or len(set(path)) != len(path):
            return False
        if path in self._paths:
            return False
        if len(self._paths) >= self.capacity:
            self._paths.popitem(last=False)
            self.evictions += 1
            if self.stats is not None:
                self.stats.cache_evictions += 1
        self._paths[path] = now
        return True

    def lookup(self, target: int) -> Optional[Path]:
        best: Optional[Path] = None
        for path in self._paths:
            if target not in path:
                continue
            candidate = path[: path.index(target) + 1]
            if len(candidate) >= 2 and (best is None or len(candidate) < len(best)):
                best = candidate
        return best

    def remove_link(self, a: int, b: int) -> int:
        """Cut every path at the (a, b) link in either direction; returns paths touched"""
        touched = 0
        rebuilt: "OrderedDict[Path, int]" = OrderedDict()
        for path, added_at in self._paths.items():
            cut = None
            for i in range(len(path) - 1):
                if {path[i], path[i + 1]} == {a, b}:
                    cut = i
                    break
            if cut is None:
                rebuilt.setdefault(path, added_at)
                continue
            touched += 1
            prefix = path[: cut + 1]
            if len(prefix) >= 2:
                rebuilt.setdefault(prefix, added_at)
        self._paths = rebuilt
        return touched


class DsrProtocol(RoutingProtocol):
    """
    DSR node: source routing from a route cache

    What this does: cache-first discovery with route records, replies from
    caches, per-hop source-routed forwarding, salvaging of DATA on transmit
    failure, RERR piggybacked on the next RREQ and promiscuous route learning
    Why: the cache-based reactive protocol; DSR-M only shrinks the cache
    How: every packet that travels a known path carries a SourceRouteHeader;
    the header cursor names the node currently holding the packet
    """

    name = "dsr"
    promiscuous = True

    def __init__(self, node: int, network, params: RoutingParams):
        super().__init__(node, network, params)
        self.cache = RouteCache(node, self.cache_capacity(params), self.stats)
        self.pending_errors: List[Tuple[int, int]] = []

    def cache_capacity(self, params: RoutingParams) -> int:
        return params.dsr_cache_capacity

    def learn(self, path: Sequence[int]) -> None:
        self.cache.add(path, self.sim.now)

    def learn_from(self, path: Sequence[int]) -> None:
        """Learn both directions of a path this node lies on"""
        path = tuple(path)
        if self.node not in path:
            return
        i = path.index(self.node)
        self.learn(path[i:])
        self.learn(tuple(reversed(path[: i + 1])))

    def learn_via(self, sender: int, path: Sequence[int]) -> None:
        """Learn both directions of ``path`` through neighbour ``sender``"""
        path = tuple(path)
        if sender not in path:
            return
        i = path.index(sender)
        self.learn((self.node,) + path[i:])
        self.learn((self.node,) + tuple(reversed(path[: i + 1])))

    # -- source-routed forwarding --------------------------------------------

    def forward_along(self, packet: Packet) -> None:
        header = packet.source_route
        next_hop = header.next_hop
        if next_hop is None:
            return
        out = self.outgoing(packet, source_route=header.advanced())
        if out is None:
            if packet.kind is PacketKind.DATA:
                self.stats.drop_data(packet, "ttl_expired")
            return
        self.unicast(out, next_hop)

    def send_source_routed(self, packet: Packet, path: Path) -> None:
        self.forward_along(replace(packet, source_route=SourceRouteHeader(path, 0)))

    # -- data ----------------------------------------------------------------

    def send_data(self, packet: Packet) -> None:
        path = self.cache.lookup(packet.dst)
        if path is not None:
            self.send_source_routed(packet, path)
            return
        self.buffer_data(packet)
        self.start_discovery(packet.dst)

    def handle_data(self, packet: Packet, sender: int) -> None:
        header = packet.source_route
        if header is None or header.current != self.node:
            return
        self.learn_from(header.hops)
        if packet.dst == self.node:
            self.deliver(packet)
            return
        self.forward_along(packet)

    def flush(self, dst: int) -> None:
        path = self.cache.lookup(dst)
        for packet in self.buffer.drain(dst):
            if path is None:
                self.stats.drop_data(packet, "no_route")
            else:
                self.send_source_routed(packet, path)

    # -- discovery -----------------------------------------------------------

    def send_rreq(self, disc: Discovery, ttl: int) -> None:
        rreq_id = self.next_rreq_id()
        payload = RreqPayload(
            rreq_id=rreq_id,
            orig=self.node,
            target=disc.dst,
            route_record=(self.node,),
            piggyback_errors=tuple(self.pending_errors),
        )
        self.pending_errors.clear()
        self.seen.first_time(self.node, rreq_id, self.sim.now)
        self.note_rreq_sent(rreq_id, disc.attempt, disc.repair)
        self.broadcast(self.control_packet(PacketKind.RREQ, BROADCAST, ttl, payload))

    def handle_rreq(self, packet: Packet, sender: int) -> None:
        p: RreqPayload = packet.payload
        if p.orig == self.node or self.node in p.route_record:
            return
        if not self.seen.first_time(p.orig, p.rreq_id, self.sim.now):
            return
        self.note_rreq_reached(p.orig, p.rreq_id)
        for a, b in p.piggyback_errors:
            self.cache.remove_link(a, b)
        record = p.route_record + (self.node,)
        self.learn(tuple(reversed(record)))

        if p.target == self.node:
            self.send_rrep(record, RrepPayload(orig=p.orig, target=self.node, route=record, hop_count=len(record) - 1))
            return

        cached = self.cache.lookup(p.target)
        if cached is not None:
            full = record + cached[1:]
            if len(set(full)) == len(full):
                self.send_rrep(
                    record,
                    RrepPayload(
                        orig=p.orig, target=p.target, route=full, hop_count=len(full) - 1, gratuitous=True
                    ),
                )
                return

        if packet.can_forward:
            self.broadcast(
                packet.forwarded(self.node, payload=replace(p, route_record=record, hop_count=p.hop_count + 1))
            )

    def send_rrep(self, record: Path, payload: RrepPayload) -> None:
        back = tuple(reversed(record))
        packet = self.control_packet(
            PacketKind.RREP,
            payload.orig,
            self.ers.net_diameter,
            payload,
            source_route=SourceRouteHeader(back, 0),
        )
        self.forward_along(packet)

    def handle_rrep(self, packet: Packet, sender: int) -> None:
        p: RrepPayload = packet.payload
        header = packet.source_route
        if header is None or header.current != self.node:
            return
        self.learn_from(p.route)
        if header.at_end:
            self.route_found(p.target)
            return
        self.forward_along(packet)

    # -- maintenance ---------------------------------------------------------

    def on_tx_failed(self, packet: Packet, next_hop: int) -> None:
        self.stats.links_declared_broken += 1
        self.cache.remove_link(self.node, next_hop)
        if packet.kind is PacketKind.DATA:
            self.salvage(packet, (self.node, next_hop))

    def salvage(self, packet: Packet, broken_hop: Tuple[int, int]) -> bool:
        header = packet.source_route
        if packet.src == self.node and header.hops[0] == self.node:
            # the source re-routes its own packet; that is not a salvage
            path = self.cache.lookup(packet.dst)
            if path is not None:
                self.send_source_routed(packet, path)
            else:
                self.buffer_data(packet)
                self.start_discovery(packet.dst)
            return False

        self.stats.salvage_attempts += 1
        alternate = self.cache.lookup(packet.dst)
        if packet.payload.salvaged >= self.params.salvage_limit or alternate is None:
            self.stats.drop_data(packet, "salvage_failed")
            self.report_broken_link(packet, broken_hop)
            logger.debug(f"dsr node {self.node}: salvage of {packet.uid} failed")
            return False

        self.stats.salvages += 1
        salvaged = replace(
            packet,
            payload=replace(packet.payload, salvaged=packet.payload.salvaged + 1),
            source_route=SourceRouteHeader(alternate, 0),
        )
        announcement = RerrPayload(broken_link=broken_hop, orig=self.node)
        self.broadcast(self.control_packet(PacketKind.RERR, BROADCAST, 1, announcement))
        self.stats.rerr_originations += 1
        self.forward_along(salvaged)
        return True

    def report_broken_link(self, packet: Packet, broken_hop: Tuple[int, int]) -> None:
        """Send the broken link back to the packet's source along the reversed traversed path"""
        header = packet.source_route
        back = tuple(reversed(header.hops[: header.cursor]))
        if len(back) < 2 or back[0] != self.node:
            self.remember_error(broken_hop)
            return
        self.stats.rerr_originations += 1
        rerr = self.control_packet(
            PacketKind.RERR,
            back[-1],
            self.ers.net_diameter,
            RerrPayload(broken_link=broken_hop, orig=self.node),
            source_route=SourceRouteHeader(back, 0),
        )
        self.forward_along(rerr)

    def remember_error(self, link: Tuple[int, int]) -> None:
        if link not in self.pending_errors:
            self.pending_errors.append(link)

    def handle_rerr(self, packet: Packet, sender: int) -> None:
        self.stats.rerr_receivers += 1
        p: RerrPayload = packet.payload
        if p.broken_link is not None:
            self.cache.remove_link(*p.broken_link)
        header = packet.source_route
        if header is None or header.current != self.node:
            return
        if header.at_end:
            if p.broken_link is not None:
                self.remember_error(p.broken_link)
            return
        self.forward_along(packet)

    def overhear(self, packet: Packet, sender: int) -> None:
        if packet.kind is PacketKind.RERR:
            if packet.payload.broken_link is not None:
                self.cache.remove_link(*packet.payload.broken_link)
            return
        if packet.kind is PacketKind.RREP:
            self.learn_via(sender, packet.payload.route)
        elif packet.kind is PacketKind.DATA and packet.source_route is not None:
            self.learn_via(sender, packet.source_route.hops)


class DsrMProtocol(DsrProtocol):
    """DSR with a smaller route cache, so stale paths are evicted sooner"""

    name = "dsr-m"

    def cache_capacity(self, params: RoutingParams) -> int:
        return params.dsrm_cache_capacity
