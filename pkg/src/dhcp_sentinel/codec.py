"""DHCP wire codec.

Layout: 236-byte fixed BOOTP header, the magic cookie ``63 82 53 63`` and a
run of type-length-value options closed by the end option (255).  Options the
codec understands (53 message type, 54 server id, 3 router, 6 dns, 51 lease)
are lifted into fields; everything else is kept verbatim in
``extra_options``.  Serialization emits options in ascending code order so
structurally equal messages always produce the same bytes.
"""
from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass
from ipaddress import IPv4Address
from typing import Iterable, Optional, Sequence, Tuple

MAGIC_COOKIE = b"\x63\x82\x53\x63"
HEADER_LEN = 236
MIN_LEN = HEADER_LEN + len(MAGIC_COOKIE)

OPT_PAD = 0
OPT_ROUTER = 3
OPT_DNS = 6
OPT_LEASE = 51
OPT_MESSAGE_TYPE = 53
OPT_SERVER_ID = 54
OPT_END = 255

STRUCTURED_OPTIONS = frozenset({OPT_ROUTER, OPT_DNS, OPT_LEASE, OPT_MESSAGE_TYPE, OPT_SERVER_ID})

_HEADER = struct.Struct("!BBBBIHH4s4s4s4s16s64s128s")
assert _HEADER.size == HEADER_LEN

ZERO_ADDR = IPv4Address(0)


class DhcpError(ValueError):
    """Base class for codec failures."""


class Truncated(DhcpError):
    pass


class BadMagic(DhcpError):
    pass


class MissingMessageType(DhcpError):
    pass


class DuplicateOption53(DhcpError):
    pass


class MalformedOption(DhcpError):
    """A structured option has a payload the codec cannot lift into its field."""


class InvariantViolation(DhcpError):
    pass


@dataclass(frozen=True, order=True)
class MacAddress:
    octets: bytes

    def __post_init__(self):
        if not isinstance(self.octets, (bytes, bytearray)) or len(self.octets) != 6:
            raise ValueError(f"MAC address needs exactly 6 octets, got {self.octets!r}")
        object.__setattr__(self, "octets", bytes(self.octets))

    @classmethod
    def parse(cls, text: str) -> "MacAddress":
        parts = text.replace("-", ":").split(":")
        if len(parts) != 6 or not all(len(p) == 2 for p in parts):
            raise ValueError(f"not a MAC address: {text!r}")
        return cls(bytes.fromhex("".join(parts)))

    def __str__(self) -> str:
        return ":".join(f"{b:02x}" for b in self.octets)

    def __repr__(self) -> str:
        return f"MacAddress('{self}')"


BROADCAST_MAC = MacAddress(b"\xff" * 6)


class DhcpMessageType(enum.IntEnum):
    DISCOVER = 1
    OFFER = 2
    REQUEST = 3
    DECLINE = 4
    ACK = 5
    NAK = 6
    RELEASE = 7
    INFORM = 8


@dataclass(frozen=True, order=True)
class DhcpOption:
    code: int
    payload: bytes = b""

    def __post_init__(self):
        if not 1 <= self.code <= 254:
            raise InvariantViolation(f"option code {self.code} cannot be stored")
        if len(self.payload) > 255:
            raise InvariantViolation(f"option {self.code} payload is {len(self.payload)} bytes (max 255)")
        object.__setattr__(self, "payload", bytes(self.payload))


@dataclass(frozen=True)
class DhcpMessage:
    op: int
    xid: int
    client_mac: MacAddress
    message_type: DhcpMessageType
    your_addr: IPv4Address = ZERO_ADDR
    server_addr: IPv4Address = ZERO_ADDR
    relay_addr: IPv4Address = ZERO_ADDR
    client_addr: IPv4Address = ZERO_ADDR
    server_id: Optional[IPv4Address] = None
    router: Optional[IPv4Address] = None
    dns: Optional[Tuple[IPv4Address, ...]] = None
    lease_secs: Optional[int] = None
    extra_options: Tuple[DhcpOption, ...] = ()
    # BOOTP pass-through
    htype: int = 1
    hops: int = 0
    secs: int = 0
    flags: int = 0

    def __post_init__(self):
        object.__setattr__(self, "message_type", DhcpMessageType(self.message_type))
        if self.dns is not None:
            object.__setattr__(self, "dns", tuple(self.dns))
        # canonical order makes equality independent of how options were supplied
        object.__setattr__(self, "extra_options", tuple(sorted(self.extra_options)))

    @property
    def is_offer_like(self) -> bool:
        return self.message_type in (DhcpMessageType.OFFER, DhcpMessageType.ACK)

    def validate(self) -> None:
        if not 0 <= self.op <= 255:
            raise InvariantViolation(f"op {self.op} out of range")
        if not 0 <= self.xid <= 0xFFFFFFFF:
            raise InvariantViolation(f"xid {self.xid} is not 32-bit")
        for name, bound in (("htype", 0xFF), ("hops", 0xFF), ("secs", 0xFFFF), ("flags", 0xFFFF)):
            if not 0 <= getattr(self, name) <= bound:
                raise InvariantViolation(f"{name} out of range")
        if self.lease_secs is not None and not 0 <= self.lease_secs <= 0xFFFFFFFF:
            raise InvariantViolation("lease_secs is not 32-bit")
        if self.dns is not None and not 1 <= len(self.dns) <= 63:
            raise InvariantViolation("dns option needs 1..63 addresses")
        for opt in self.extra_options:
            if opt.code in STRUCTURED_OPTIONS:
                raise InvariantViolation(f"option {opt.code} must be carried by its field")


def _options(msg: DhcpMessage) -> list:
    opts = [DhcpOption(OPT_MESSAGE_TYPE, bytes([msg.message_type]))]
    if msg.server_id is not None:
        opts.append(DhcpOption(OPT_SERVER_ID, msg.server_id.packed))
    if msg.router is not None:
        opts.append(DhcpOption(OPT_ROUTER, msg.router.packed))
    if msg.dns is not None:
        opts.append(DhcpOption(OPT_DNS, b"".join(a.packed for a in msg.dns)))
    if msg.lease_secs is not None:
        opts.append(DhcpOption(OPT_LEASE, struct.pack("!I", msg.lease_secs)))
    opts.extend(msg.extra_options)
    # stable on code, so equal-code extras keep their (already sorted) order
    return sorted(opts, key=lambda o: o.code)


def serialize_dhcp(msg: DhcpMessage) -> bytes:
    msg.validate()
    header = _HEADER.pack(
        msg.op, msg.htype, 6, msg.hops, msg.xid, msg.secs, msg.flags,
        msg.client_addr.packed, msg.your_addr.packed, msg.server_addr.packed,
        msg.relay_addr.packed, msg.client_mac.octets.ljust(16, b"\x00"),
        b"", b"",
    )
    out = bytearray(header)
    out += MAGIC_COOKIE
    for opt in _options(msg):
        out += bytes([opt.code, len(opt.payload)]) + opt.payload
    out.append(OPT_END)
    return bytes(out)


def _addr(code: int, payload: bytes) -> IPv4Address:
    if len(payload) != 4:
        raise MalformedOption(f"option {code} needs 4 bytes, got {len(payload)}")
    return IPv4Address(payload)


def parse_dhcp(data: bytes) -> DhcpMessage:
    data = bytes(data)
    if len(data) < MIN_LEN:
        raise Truncated(f"{len(data)} bytes, need at least {MIN_LEN}")
    (op, htype, _hlen, hops, xid, secs, flags, ciaddr, yiaddr, siaddr, giaddr,
     chaddr, _sname, _file) = _HEADER.unpack_from(data)
    if data[HEADER_LEN:MIN_LEN] != MAGIC_COOKIE:
        raise BadMagic(data[HEADER_LEN:MIN_LEN].hex())

    seen = {}
    extras = []
    pos = MIN_LEN
    while True:
        if pos >= len(data):
            raise Truncated("options ended without end marker")
        code = data[pos]
        if code == OPT_PAD:
            pos += 1
            continue
        if code == OPT_END:
            break
        if pos + 1 >= len(data):
            raise Truncated(f"option {code} has no length octet")
        length = data[pos + 1]
        start, pos = pos + 2, pos + 2 + length
        if pos > len(data):
            raise Truncated(f"option {code} length {length} overruns buffer")
        payload = data[start:pos]
        if code in STRUCTURED_OPTIONS:
            if code in seen:
                if code == OPT_MESSAGE_TYPE:
                    raise DuplicateOption53()
                raise MalformedOption(f"option {code} repeated")
            seen[code] = payload
        else:
            extras.append(DhcpOption(code, payload))

    if OPT_MESSAGE_TYPE not in seen:
        raise MissingMessageType()
    mt = seen[OPT_MESSAGE_TYPE]
    if len(mt) != 1 or mt[0] not in DhcpMessageType._value2member_map_:
        raise MalformedOption(f"bad message type payload {mt.hex()}")

    dns = None
    if OPT_DNS in seen:
        raw = seen[OPT_DNS]
        if not raw or len(raw) % 4:
            raise MalformedOption(f"dns option length {len(raw)}")
        dns = tuple(IPv4Address(raw[i:i + 4]) for i in range(0, len(raw), 4))
    lease = None
    if OPT_LEASE in seen:
        if len(seen[OPT_LEASE]) != 4:
            raise MalformedOption("lease option needs 4 bytes")
        lease = struct.unpack("!I", seen[OPT_LEASE])[0]

    return DhcpMessage(
        op=op, xid=xid, client_mac=MacAddress(chaddr[:6]),
        message_type=DhcpMessageType(mt[0]),
        your_addr=IPv4Address(yiaddr), server_addr=IPv4Address(siaddr),
        relay_addr=IPv4Address(giaddr), client_addr=IPv4Address(ciaddr),
        server_id=_addr(OPT_SERVER_ID, seen[OPT_SERVER_ID]) if OPT_SERVER_ID in seen else None,
        router=_addr(OPT_ROUTER, seen[OPT_ROUTER]) if OPT_ROUTER in seen else None,
        dns=dns, lease_secs=lease, extra_options=tuple(extras),
        htype=htype, hops=hops, secs=secs, flags=flags,
    )


def message_digest(msg: DhcpMessage) -> bytes:
    """SHA-256 over the canonical serialization."""
    return hashlib.sha256(serialize_dhcp(msg)).digest()


def load_hex_fixtures(lines: Iterable[str]) -> list:
    """Read hex-encoded messages, one per line; blank lines and ``#`` comments skipped."""
    out = []
    for line in lines:
        line = line.strip()
        if line and not line.startswith("#"):
            out.append(bytes.fromhex(line))
    return out


def dump_hex_fixtures(frames: Sequence[bytes]) -> str:
    return "".join(f.hex() + "\n" for f in frames)


# -- plain-object form used by the trace format ---------------------------------

def message_to_dict(msg: DhcpMessage) -> dict:
    d = {
        "op": msg.op,
        "xid": msg.xid,
        "client_mac": str(msg.client_mac),
        "message_type": msg.message_type.name.lower(),
        "your_addr": str(msg.your_addr),
        "server_addr": str(msg.server_addr),
        "relay_addr": str(msg.relay_addr),
        "client_addr": str(msg.client_addr),
    }
    if msg.server_id is not None:
        d["server_id"] = str(msg.server_id)
    if msg.router is not None:
        d["router"] = str(msg.router)
    if msg.dns is not None:
        d["dns"] = [str(a) for a in msg.dns]
    if msg.lease_secs is not None:
        d["lease_secs"] = msg.lease_secs
    if msg.extra_options:
        d["extra_options"] = [[o.code, o.payload.hex()] for o in msg.extra_options]
    for name, default in (("htype", 1), ("hops", 0), ("secs", 0), ("flags", 0)):
        if getattr(msg, name) != default:
            d[name] = getattr(msg, name)
    return d


def message_from_dict(d: dict) -> DhcpMessage:
    def ip(key):
        return IPv4Address(d[key]) if key in d else ZERO_ADDR

    return DhcpMessage(
        op=int(d["op"]),
        xid=int(d["xid"]),
        client_mac=MacAddress.parse(d["client_mac"]),
        message_type=DhcpMessageType[d["message_type"].upper()],
        your_addr=ip("your_addr"),
        server_addr=ip("server_addr"),
        relay_addr=ip("relay_addr"),
        client_addr=ip("client_addr"),
        server_id=IPv4Address(d["server_id"]) if "server_id" in d else None,
        router=IPv4Address(d["router"]) if "router" in d else None,
        dns=tuple(IPv4Address(a) for a in d["dns"]) if "dns" in d else None,
        lease_secs=d.get("lease_secs"),
        extra_options=tuple(DhcpOption(int(c), bytes.fromhex(p)) for c, p in d.get("extra_options", ())),
        htype=d.get("htype", 1),
        hops=d.get("hops", 0),
        secs=d.get("secs", 0),
        flags=d.get("flags", 0),
    )
