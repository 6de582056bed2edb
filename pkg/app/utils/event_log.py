from typing import IO, Optional


class EventLog:
    """Tab-separated per-event trace: time_us, node, event_kind, packet_uid, packet_kind, detail"""

    HEADER = "time_us\tnode\tevent_kind\tpacket_uid\tpacket_kind\tdetail\n"

    def __init__(self, stream: IO[str], header: bool = True):
        self.stream = stream
        self.lines = 0
        if header:
            self.stream.write(self.HEADER)

    def write(self, time_us: int, node: int, kind: str, packet=None, detail: str = "") -> None:
        uid = str(packet.uid) if packet is not None else "-"
        pkind = packet.kind.value if packet is not None else "-"
        node_field = str(node) if node >= 0 else "-"
        self.stream.write(f"{time_us}\t{node_field}\t{kind}\t{uid}\t{pkind}\t{detail or '-'}\n")
        self.lines += 1

    @classmethod
    def open(cls, path: Optional[str]) -> Optional["EventLog"]:
        if path is None:
            return None
        return cls(open(path, "w", encoding="utf-8", newline="\n"))

    def close(self) -> None:
        self.stream.close()
