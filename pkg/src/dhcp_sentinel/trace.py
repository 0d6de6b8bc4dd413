"""Labeled network-event traces and their line-delimited file format.

A trace file is UTF-8 JSON Lines.  The first line is a header
``{"format": "dsent-trace/1", "meta": {...}}``; every following line is one
event record.  An empty file is an empty trace.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from ipaddress import IPv4Address
from typing import Dict, Iterator, List, Mapping, Optional, TextIO, Tuple, Union

from .codec import DhcpError, DhcpMessage, MacAddress, message_from_dict, message_to_dict, parse_dhcp

TRACE_FORMAT = "dsent-trace/1"


class TraceError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class TraceSyntaxError(TraceError):
    pass


class OrderingViolation(TraceError):
    pass


class DuplicateId(TraceError):
    pass


class AttackClass(str, enum.Enum):
    BENIGN = "benign"
    ROGUE_DHCP = "rogue_dhcp"
    DOS = "dos"
    U2R = "u2r"
    R2L = "r2l"
    PROBE = "probe"

    @property
    def is_attack(self) -> bool:
        return self is not AttackClass.BENIGN


class Severity(str, enum.Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


class Direction(str, enum.Enum):
    INBOUND = "in"
    OUTBOUND = "out"


@dataclass(frozen=True)
class Endpoint:
    mac: MacAddress
    ip: Optional[IPv4Address] = None
    position: Optional[Tuple[float, float]] = None
    radio_range: Optional[float] = None

    def __post_init__(self):
        if self.radio_range is not None and not self.radio_range > 0:
            raise ValueError("radio_range must be positive")
        if self.position is not None:
            object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))

    def to_dict(self) -> dict:
        d = {"mac": str(self.mac)}
        if self.ip is not None:
            d["ip"] = str(self.ip)
        if self.position is not None:
            d["pos"] = list(self.position)
        if self.radio_range is not None:
            d["range"] = self.radio_range
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Endpoint":
        return cls(
            mac=MacAddress.parse(d["mac"]),
            ip=IPv4Address(d["ip"]) if d.get("ip") is not None else None,
            position=tuple(d["pos"]) if d.get("pos") is not None else None,
            radio_range=d.get("range"),
        )


# -- event kinds -----------------------------------------------------------------

@dataclass(frozen=True)
class DhcpFrame:
    raw: Optional[bytes] = None
    message: Optional[DhcpMessage] = None
    tag = "dhcp"

    def __post_init__(self):
        if (self.raw is None) == (self.message is None):
            raise ValueError("DhcpFrame carries exactly one of raw bytes or a decoded message")

    def decode(self) -> DhcpMessage:
        """Decoded message; raises a codec error for malformed raw bytes."""
        if self.message is not None:
            return self.message
        return parse_dhcp(self.raw)


@dataclass(frozen=True)
class TcpSyn:
    acked: bool = True
    tag = "tcp_syn"


@dataclass(frozen=True)
class DataPacket:
    payload_digest: str
    payload_len: int
    retransmission_of: Optional[int] = None
    declared_len: Optional[int] = None
    acked: bool = True
    payload: Optional[bytes] = None
    tag = "data"


@dataclass(frozen=True)
class LogEntry:
    facility: str
    text: str = ""
    attributes: Mapping[str, str] = field(default_factory=dict)
    status_code: Optional[int] = None
    tag = "log"


@dataclass(frozen=True)
class ConnectionRecord:
    duration_secs: float
    service: str
    failed_logins: int = 0
    tag = "conn"


EventKind = Union[DhcpFrame, TcpSyn, DataPacket, LogEntry, ConnectionRecord]


def payload_digest(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def _kind_to_dict(kind: EventKind) -> dict:
    if isinstance(kind, DhcpFrame):
        if kind.raw is not None:
            return {"tag": "dhcp", "dhcp_hex": kind.raw.hex()}
        return {"tag": "dhcp", "dhcp": message_to_dict(kind.message)}
    if isinstance(kind, TcpSyn):
        return {"tag": "tcp_syn", "acked": kind.acked}
    if isinstance(kind, DataPacket):
        d = {"tag": "data", "payload_digest": kind.payload_digest, "payload_len": kind.payload_len,
             "acked": kind.acked}
        if kind.retransmission_of is not None:
            d["retransmission_of"] = kind.retransmission_of
        if kind.declared_len is not None:
            d["declared_len"] = kind.declared_len
        if kind.payload is not None:
            d["payload_hex"] = kind.payload.hex()
        return d
    if isinstance(kind, LogEntry):
        d = {"tag": "log", "facility": kind.facility, "text": kind.text,
             "attributes": dict(kind.attributes)}
        if kind.status_code is not None:
            d["status_code"] = kind.status_code
        return d
    if isinstance(kind, ConnectionRecord):
        return {"tag": "conn", "duration_secs": kind.duration_secs, "service": kind.service,
                "failed_logins": kind.failed_logins}
    raise TypeError(f"unknown event kind {kind!r}")


def _kind_from_dict(d: Mapping) -> EventKind:
    tag = d["tag"]
    if tag == "dhcp":
        if "dhcp_hex" in d:
            return DhcpFrame(raw=bytes.fromhex(d["dhcp_hex"]))
        return DhcpFrame(message=message_from_dict(d["dhcp"]))
    if tag == "tcp_syn":
        return TcpSyn(acked=bool(d.get("acked", True)))
    if tag == "data":
        return DataPacket(
            payload_digest=d["payload_digest"],
            payload_len=int(d["payload_len"]),
            retransmission_of=d.get("retransmission_of"),
            declared_len=d.get("declared_len"),
            acked=bool(d.get("acked", True)),
            payload=bytes.fromhex(d["payload_hex"]) if "payload_hex" in d else None,
        )
    if tag == "log":
        return LogEntry(facility=d["facility"], text=d.get("text", ""),
                        attributes={str(k): str(v) for k, v in d.get("attributes", {}).items()},
                        status_code=d.get("status_code"))
    if tag == "conn":
        return ConnectionRecord(duration_secs=float(d["duration_secs"]), service=d["service"],
                                failed_logins=int(d.get("failed_logins", 0)))
    raise ValueError(f"unknown kind tag {tag!r}")


@dataclass(frozen=True)
class NetworkEvent:
    id: int
    timestamp: float
    direction: Direction
    src: Endpoint
    dst: Endpoint
    kind: EventKind
    label: Optional[AttackClass] = None

    @property
    def is_attack(self) -> bool:
        return self.label is not None and self.label.is_attack

    def to_dict(self) -> dict:
        d = {"id": self.id, "ts": self.timestamp, "dir": self.direction.value,
             "src": self.src.to_dict(), "dst": self.dst.to_dict(), "kind": _kind_to_dict(self.kind)}
        if self.label is not None:
            d["label"] = self.label.value
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkEvent":
        label = d.get("label")
        return cls(
            id=int(d["id"]),
            timestamp=float(d["ts"]),
            direction=Direction(d["dir"]),
            src=Endpoint.from_dict(d["src"]),
            dst=Endpoint.from_dict(d["dst"]),
            kind=_kind_from_dict(d["kind"]),
            label=AttackClass(label) if label is not None else None,
        )

    def view(self) -> dict:
        """Field tree used by signature paths. Ground-truth labels are not exposed."""
        kind = _kind_to_dict(self.kind)
        tag = kind.pop("tag")
        if isinstance(self.kind, DhcpFrame):
            try:
                kind = message_to_dict(self.kind.decode())
            except DhcpError:
                kind = {}
        return {"id": self.id, "ts": self.timestamp, "dir": self.direction.value,
                "src": self.src.to_dict(), "dst": self.dst.to_dict(), "kind": {tag: kind}}


@dataclass(frozen=True)
class EventTrace:
    events: Tuple[NetworkEvent, ...] = ()
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "meta", dict(self.meta))
        validate_events(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[NetworkEvent]:
        return iter(self.events)

    @property
    def duration(self) -> float:
        if not self.events:
            return 0.0
        return self.events[-1].timestamp - self.events[0].timestamp

    def label_counts(self) -> Dict[AttackClass, int]:
        counts = {c: 0 for c in AttackClass}
        for ev in self.events:
            counts[ev.label or AttackClass.BENIGN] += 1
        return counts


def validate_events(events, first_line: int = 1) -> None:
    seen = set()
    prev = -math.inf
    for i, ev in enumerate(events):
        line = first_line + i
        if not math.isfinite(ev.timestamp):
            raise TraceSyntaxError(line, "timestamp must be finite")
        if ev.timestamp < prev:
            raise OrderingViolation(line, f"timestamp {ev.timestamp} precedes {prev}")
        if ev.id in seen:
            raise DuplicateId(line, f"event id {ev.id} repeated")
        seen.add(ev.id)
        prev = ev.timestamp


def load_trace(source: TextIO) -> EventTrace:
    events: List[NetworkEvent] = []
    meta: Dict[str, str] = {}
    ids = set()
    for lineno, line in enumerate(source, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceSyntaxError(lineno, str(exc)) from None
        if lineno == 1 and isinstance(rec, dict) and "format" in rec:
            if rec["format"] != TRACE_FORMAT:
                raise TraceSyntaxError(lineno, f"unsupported format {rec['format']!r}")
            meta = {str(k): str(v) for k, v in rec.get("meta", {}).items()}
            continue
        try:
            ev = NetworkEvent.from_dict(rec)
        except (KeyError, TypeError, ValueError) as exc:
            raise TraceSyntaxError(lineno, f"bad record: {exc!r}") from None
        if not math.isfinite(ev.timestamp):
            raise TraceSyntaxError(lineno, "timestamp must be finite")
        if events and ev.timestamp < events[-1].timestamp:
            raise OrderingViolation(lineno, f"timestamp {ev.timestamp} precedes {events[-1].timestamp}")
        if ev.id in ids:
            raise DuplicateId(lineno, f"event id {ev.id} repeated")
        ids.add(ev.id)
        events.append(ev)
    return EventTrace(tuple(events), meta)


def write_trace(trace: EventTrace, sink: TextIO) -> None:
    header = {"format": TRACE_FORMAT, "meta": dict(trace.meta)}
    sink.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
    for ev in trace.events:
        sink.write(json.dumps(ev.to_dict(), sort_keys=True, separators=(",", ":")) + "\n")
