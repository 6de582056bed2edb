from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Optional, Tuple

BROADCAST = -1


class PacketKind(str, Enum):
    """Wire-level packet kinds shared by every protocol"""

    RREQ = "RREQ"
    RREP = "RREP"
    RERR = "RERR"
    HELLO = "HELLO"
    DATA = "DATA"


CONTROL_KINDS = frozenset(
    {PacketKind.RREQ, PacketKind.RREP, PacketKind.RERR, PacketKind.HELLO}
)


@dataclass(frozen=True, slots=True)
class PacketSizes:
    """On-air sizes in bytes; DATA adds its header to the scenario payload size"""

    rreq_bytes: int = 64
    rrep_bytes: int = 64
    rerr_bytes: int = 64
    hello_bytes: int = 32
    data_header_bytes: int = 32

    def control_bits(self, kind: PacketKind) -> int:
        sizes = {
            PacketKind.RREQ: self.rreq_bytes,
            PacketKind.RREP: self.rrep_bytes,
            PacketKind.RERR: self.rerr_bytes,
            PacketKind.HELLO: self.hello_bytes,
        }
        return sizes[kind] * 8

    def data_bits(self, payload_bytes: int) -> int:
        return (payload_bytes + self.data_header_bytes) * 8


@dataclass(frozen=True, slots=True)
class SourceRouteHeader:
    """Explicit hop list carried by DSR packets; ``cursor`` indexes the current holder"""

    hops: Tuple[int, ...]
    cursor: int = 0

    def __post_init__(self):
        if len(set(self.hops)) != len(self.hops):
            raise ValueError(f"source route repeats a node: {self.hops}")
        if not 0 <= self.cursor < len(self.hops):
            raise ValueError(f"cursor {self.cursor} outside route {self.hops}")

    @property
    def current(self) -> int:
        return self.hops[self.cursor]

    @property
    def next_hop(self) -> Optional[int]:
        if self.cursor + 1 < len(self.hops):
            return self.hops[self.cursor + 1]
        return None

    @property
    def at_end(self) -> bool:
        return self.cursor == len(self.hops) - 1

    def advanced(self) -> "SourceRouteHeader":
        return SourceRouteHeader(self.hops, self.cursor + 1)

    def traversed(self) -> Tuple[int, ...]:
        return self.hops[: self.cursor + 1]

    def remaining(self) -> Tuple[int, ...]:
        return self.hops[self.cursor :]


@dataclass(frozen=True, slots=True)
class RreqPayload:
    rreq_id: int
    orig: int
    target: int
    orig_seq: int = 0
    # 0 means "unknown destination sequence number"
    dst_seq: int = 0
    hop_count: int = 0
    route_record: Tuple[int, ...] = ()
    piggyback_errors: Tuple[Tuple[int, int], ...] = ()
    repair: bool = False


@dataclass(frozen=True, slots=True)
class RrepPayload:
    orig: int
    target: int
    dst_seq: int = 0
    hop_count: int = 0
    route: Tuple[int, ...] = ()
    gratuitous: bool = False


@dataclass(frozen=True, slots=True)
class RerrPayload:
    unreachable: Tuple[Tuple[int, int], ...] = ()
    broken_link: Optional[Tuple[int, int]] = None
    orig: int = -1
    rerr_id: int = 0


@dataclass(frozen=True, slots=True)
class HelloPayload:
    seq: int


@dataclass(frozen=True, slots=True)
class DataPayload:
    flow_id: int
    payload_bits: int
    salvaged: int = 0


@dataclass(slots=True)
class Packet:
    """
    A single packet on the simulated channel

    Packets are treated as immutable once handed to the channel: a node that
    forwards a packet builds its copy with ``forwarded()`` so every receiver of
    a broadcast can share the same instance.
    """

    kind: PacketKind
    src: int
    dst: int
    prev_hop: int
    ttl: int
    size_bits: int
    uid: int
    payload: Any = None
    created_at: Optional[int] = None
    source_route: Optional[SourceRouteHeader] = field(default=None)

    def __post_init__(self):
        if self.size_bits <= 0:
            raise ValueError(f"packet size must be positive, got {self.size_bits}")
        if self.ttl < 0:
            raise ValueError(f"ttl must be nonnegative, got {self.ttl}")
        if self.kind is PacketKind.DATA and self.created_at is None:
            raise ValueError("DATA packets carry their origination timestamp")

    @property
    def is_control(self) -> bool:
        return self.kind in CONTROL_KINDS

    @property
    def can_forward(self) -> bool:
        return self.ttl > 1

    def forwarded(self, sender: int, **changes) -> "Packet":
        """Copy for the next hop: ttl drops by exactly one"""
        if not self.can_forward:
            raise ValueError(f"packet {self.uid} has ttl {self.ttl}, cannot be forwarded")
        return replace(self, prev_hop=sender, ttl=self.ttl - 1, **changes)
