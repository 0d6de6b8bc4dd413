"""Top detection layer: tell rogue DHCP servers from whitelisted ones."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from ipaddress import IPv4Address, IPv4Network, ip_network
from typing import BinaryIO, Dict, Iterable, List, Optional, Tuple

from ._compat import tomllib
from .codec import DhcpError, DhcpMessage, DhcpMessageType, MacAddress
from .trace import DhcpFrame, Endpoint, NetworkEvent


class NotAnOffer(ValueError):
    pass


class WhitelistError(ValueError):
    pass


class RogueReason(str, enum.Enum):
    UNKNOWN_SERVER_ID = "unknown_server_id"
    MAC_MISMATCH = "mac_mismatch"
    OUT_OF_POOL_ADDRESS = "out_of_pool_address"
    WRONG_ROUTER = "wrong_router"
    WRONG_DNS = "wrong_dns"
    MISSING_SERVER_ID = "missing_server_id"


@dataclass(frozen=True)
class ServerSignature:
    server_id: IPv4Address
    mac: MacAddress
    pool: IPv4Network
    expected_router: IPv4Address
    expected_dns: Tuple[IPv4Address, ...]

    def __post_init__(self):
        object.__setattr__(self, "expected_dns", tuple(self.expected_dns))
        if self.pool.num_addresses == 0:
            raise WhitelistError("empty pool")
        if not self.expected_dns:
            raise WhitelistError(f"server {self.server_id}: expected_dns must not be empty")

    def to_dict(self) -> dict:
        return {"server_id": str(self.server_id), "mac": str(self.mac), "pool": str(self.pool),
                "router": str(self.expected_router), "dns": [str(a) for a in self.expected_dns]}

    @classmethod
    def from_dict(cls, d) -> "ServerSignature":
        try:
            return cls(
                server_id=IPv4Address(d["server_id"]),
                mac=MacAddress.parse(d["mac"]),
                pool=ip_network(d["pool"], strict=False),
                expected_router=IPv4Address(d["router"]),
                expected_dns=tuple(IPv4Address(a) for a in d["dns"]),
            )
        except KeyError as exc:
            raise WhitelistError(f"whitelist entry missing key {exc}") from None


@dataclass(frozen=True)
class Whitelist:
    entries: Tuple[ServerSignature, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        ids = [e.server_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise WhitelistError("duplicate server_id in whitelist")

    def get(self, server_id: Optional[IPv4Address]) -> Optional[ServerSignature]:
        for e in self.entries:
            if e.server_id == server_id:
                return e
        return None

    def __contains__(self, server_id) -> bool:
        return self.get(server_id) is not None

    def with_entry(self, entry: ServerSignature) -> "Whitelist":
        return Whitelist(self.entries + (entry,))


def load_whitelist(source: BinaryIO) -> Whitelist:
    """Read a TOML whitelist: one ``[[server]]`` table per legitimate server."""
    try:
        doc = tomllib.load(source)
    except tomllib.TOMLDecodeError as exc:
        raise WhitelistError(str(exc)) from None
    return Whitelist(tuple(ServerSignature.from_dict(d) for d in doc.get("server", [])))


@dataclass(frozen=True)
class Verdict:
    reasons: Tuple[RogueReason, ...] = ()

    @property
    def legitimate(self) -> bool:
        return not self.reasons

    @property
    def rogue(self) -> bool:
        return bool(self.reasons)


LEGITIMATE = Verdict()


def verify_offer(offer: DhcpMessage, src: Endpoint, wl: Whitelist) -> Verdict:
    """Check an Offer/Ack against the stored server signatures.

    A known server_id is compared against its own entry.  An unknown one is
    still compared against the whitelist as a whole, so a rogue that hands out
    a foreign router, dns or address gets those reasons listed as well.
    """
    if not offer.is_offer_like:
        raise NotAnOffer(f"{offer.message_type.name} is not an Offer/Ack")
    if offer.server_id is None:
        return Verdict((RogueReason.MISSING_SERVER_ID,))

    reasons: List[RogueReason] = []
    entry = wl.get(offer.server_id)
    if entry is None:
        reasons.append(RogueReason.UNKNOWN_SERVER_ID)
        candidates = wl.entries
    else:
        if src.mac != entry.mac:
            reasons.append(RogueReason.MAC_MISMATCH)
        candidates = (entry,)

    if candidates:
        if not any(offer.your_addr in e.pool for e in candidates):
            reasons.append(RogueReason.OUT_OF_POOL_ADDRESS)
        # absent router/dns is not suspicious by itself
        if offer.router is not None and not any(offer.router == e.expected_router for e in candidates):
            reasons.append(RogueReason.WRONG_ROUTER)
        if offer.dns is not None and not any(set(offer.dns) == set(e.expected_dns) for e in candidates):
            reasons.append(RogueReason.WRONG_DNS)
    return Verdict(tuple(reasons))


@dataclass(frozen=True)
class RaceFinding:
    xid: int
    rogue_src: Endpoint
    legit_src: Endpoint
    lead_secs: float
    rogue_event: int
    legit_event: int


class OfferRaceDetector:
    """Incremental offer-race detection keyed on the DHCP transaction id.

    Feeding a window in one batch or in any number of consecutive chunks
    yields the same findings.
    """

    def __init__(self, whitelist: Whitelist):
        self.whitelist = whitelist
        self._offers: Dict[int, List[Tuple[NetworkEvent, DhcpMessage, Verdict]]] = {}

    def update(self, events: Iterable[NetworkEvent]) -> None:
        for ev in events:
            self.observe(ev)

    def observe(self, ev: NetworkEvent, msg: Optional[DhcpMessage] = None,
                verdict: Optional[Verdict] = None) -> None:
        if not isinstance(ev.kind, DhcpFrame):
            return
        if msg is None:
            try:
                msg = ev.kind.decode()
            except DhcpError:
                return
        if msg.message_type != DhcpMessageType.OFFER:
            return
        if verdict is None:
            verdict = verify_offer(msg, ev.src, self.whitelist)
        self._offers.setdefault(msg.xid, []).append((ev, msg, verdict))

    def findings(self) -> List[RaceFinding]:
        out = []
        for xid in sorted(self._offers):
            offers = self._offers[xid]
            # a spoofed server_id from a different MAC still counts as a second server
            identities = {(m.server_id, ev.src.mac) for ev, m, _ in offers}
            if len(identities) < 2:
                continue
            rogue = [(ev, m) for ev, m, v in offers if v.rogue]
            legit = [(ev, m) for ev, m, v in offers if v.legitimate]
            if not rogue or not legit:
                continue
            r_ev = min(rogue, key=lambda p: (p[0].timestamp, p[0].id))[0]
            l_ev = min(legit, key=lambda p: (p[0].timestamp, p[0].id))[0]
            out.append(RaceFinding(xid=xid, rogue_src=r_ev.src, legit_src=l_ev.src,
                                   lead_secs=l_ev.timestamp - r_ev.timestamp,
                                   rogue_event=r_ev.id, legit_event=l_ev.id))
        return out


def detect_offer_race(window: Iterable[NetworkEvent], wl: Whitelist) -> List[RaceFinding]:
    det = OfferRaceDetector(wl)
    det.update(window)
    return det.findings()
