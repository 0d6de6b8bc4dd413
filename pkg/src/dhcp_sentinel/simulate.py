"""Seeded generator of labeled benign and attack traces.

Randomness comes from numpy's counter-based Philox bit generator.  Each
generator draws from its own stream keyed by ``SeedSequence([seed, crc32(name)])``,
so adding an attack to a scenario never perturbs the benign filler.

The benign network is shaped for the detector defaults: every flow keeps its
message gaps inside the interval bounds, nothing repeats a payload, and the
per-window metrics alternate between a quiet and a busy level so that a
baseline trained on the trace leaves headroom above its busiest window.
"""
from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from ipaddress import IPv4Address
from typing import BinaryIO, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ._compat import tomllib
from .codec import (
    BROADCAST_MAC, DhcpMessage, DhcpMessageType, MacAddress, serialize_dhcp,
)
from .trace import (
    AttackClass, ConnectionRecord, DataPacket, DhcpFrame, Direction, Endpoint, EventTrace,
    LogEntry, NetworkEvent, TcpSyn, payload_digest,
)

OUT, IN = Direction.OUTBOUND, Direction.INBOUND


class InvalidSpec(ValueError):
    pass


def _ep(mac: str, ip: str) -> Endpoint:
    return Endpoint(MacAddress.parse(mac), IPv4Address(ip))


LEGIT_SERVER = _ep("02:00:00:00:00:01", "10.0.0.1")
FILE_SERVER = _ep("02:00:00:00:00:02", "10.0.0.2")
BACKUP_SERVER = _ep("02:00:00:00:00:03", "10.0.0.3")
AUTH_SERVER = _ep("02:00:00:00:00:04", "10.0.0.4")
WEB_SERVER = _ep("02:00:00:00:00:05", "10.0.0.5")
LOG_SERVER = _ep("02:00:00:00:00:06", "10.0.0.6")
ROGUE_SERVER = _ep("02:00:00:00:00:66", "10.0.0.66")
ATTACKER = _ep("02:00:00:00:00:99", "10.0.0.99")
BROADCAST = Endpoint(BROADCAST_MAC, IPv4Address("255.255.255.255"))
ZERO = IPv4Address(0)


def host(i: int) -> Endpoint:
    return Endpoint(MacAddress(bytes([2, 0, 0, 0, 1, i])), IPv4Address(f"10.0.0.{100 + i}"))


def _fresh_mac(group: int, n: int) -> MacAddress:
    return MacAddress(bytes([2, 0, 0, group]) + n.to_bytes(2, "big"))


@dataclass(frozen=True)
class AttackSpec:
    attack_class: AttackClass
    start: float
    end: float
    params: Mapping[str, object] = field(default_factory=dict)

    def get(self, key, default):
        return self.params.get(key, default)


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    duration_secs: float
    seed: int
    benign_rate: float = 4.0
    host_count: int = 8
    window_secs: float = 5.0
    attack_mix: Tuple[AttackSpec, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "attack_mix", tuple(self.attack_mix))
        if not self.duration_secs > 0:
            raise InvalidSpec("duration_secs must be positive")
        if not self.window_secs > 0 or self.duration_secs < 2 * self.window_secs:
            raise InvalidSpec("duration must cover at least two windows")
        if not self.benign_rate > 0:
            raise InvalidSpec("benign_rate must be positive")
        if not 4 <= self.host_count <= 250:
            raise InvalidSpec("host_count must be between 4 and 250")
        if not 0 <= self.seed < 2 ** 64:
            raise InvalidSpec("seed must be an unsigned 64-bit integer")
        for a in self.attack_mix:
            if a.attack_class is AttackClass.BENIGN:
                raise InvalidSpec("benign is not an attack class")
            if not 0 <= a.start < a.end <= self.duration_secs:
                raise InvalidSpec(f"{a.attack_class.value}: interval [{a.start}, {a.end}] outside scenario")

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScenarioSpec":
        try:
            attacks = []
            for a in d.get("attack", []):
                a = dict(a)
                attacks.append(AttackSpec(AttackClass(a.pop("class")), float(a.pop("start")),
                                          float(a.pop("end")), a))
            return cls(
                name=str(d["name"]),
                duration_secs=float(d["duration_secs"]),
                seed=int(d["seed"]),
                benign_rate=float(d.get("benign_rate", 4.0)),
                host_count=int(d.get("host_count", 8)),
                window_secs=float(d.get("window_secs", 5.0)),
                attack_mix=tuple(attacks),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidSpec):
                raise
            raise InvalidSpec(f"bad scenario: {exc!r}") from None


def load_scenario(source: BinaryIO) -> ScenarioSpec:
    try:
        return ScenarioSpec.from_dict(tomllib.load(source))
    except tomllib.TOMLDecodeError as exc:
        raise InvalidSpec(str(exc)) from None


def rng_for(seed: int, stream: str) -> np.random.Generator:
    ss = np.random.SeedSequence([seed, zlib.crc32(stream.encode())])
    return np.random.Generator(np.random.Philox(ss))


class _Builder:
    def __init__(self):
        self.events: List[NetworkEvent] = []

    def add(self, ts, direction, src, dst, kind, label=AttackClass.BENIGN) -> int:
        eid = len(self.events)
        self.events.append(NetworkEvent(eid, float(ts), direction, src, dst, kind, label))
        return eid

    def trace(self, meta) -> EventTrace:
        order = sorted(range(len(self.events)), key=lambda i: (self.events[i].timestamp, i))
        remap = {old: new for new, old in enumerate(order)}
        out = []
        for new, old in enumerate(order):
            ev = self.events[old]
            kind = ev.kind
            if isinstance(kind, DataPacket) and kind.retransmission_of is not None:
                kind = DataPacket(kind.payload_digest, kind.payload_len, remap[kind.retransmission_of],
                                  kind.declared_len, kind.acked, kind.payload)
            out.append(NetworkEvent(new, ev.timestamp, ev.direction, ev.src, ev.dst, kind, ev.label))
        return EventTrace(tuple(out), meta)


def _data(tag: str, size: int, declared: Optional[int] = None, acked=True, digest=None) -> DataPacket:
    return DataPacket(payload_digest=digest or payload_digest(tag.encode()), payload_len=size,
                      declared_len=size if declared is None else declared, acked=acked)


def _dhcp(**kw) -> DhcpFrame:
    return DhcpFrame(raw=serialize_dhcp(DhcpMessage(**kw)))


def _legit_offer(xid, client: MacAddress, addr: IPv4Address, mtype=DhcpMessageType.OFFER) -> DhcpFrame:
    return _dhcp(op=2, xid=xid, client_mac=client, message_type=mtype, your_addr=addr,
                 server_addr=LEGIT_SERVER.ip, server_id=LEGIT_SERVER.ip, router=LEGIT_SERVER.ip,
                 dns=(LEGIT_SERVER.ip,), lease_secs=3600)


def burst_size(spec: ScenarioSpec) -> int:
    """Extra packets the busy host sends in even windows."""
    return max(4 * spec.host_count, math.ceil(spec.benign_rate * spec.window_secs / 2), 8)


def _meta(spec: ScenarioSpec, part: str) -> Dict[str, str]:
    return {"scenario": spec.name, "seed": str(spec.seed), "part": part}


def gen_benign(spec: ScenarioSpec) -> EventTrace:
    rng = rng_for(spec.seed, "benign")
    W, D, H = spec.window_secs, spec.duration_secs, spec.host_count
    b = _Builder()
    n_windows = math.ceil(D / W)

    # steady per-host traffic: exactly m packets per host in every full window
    m = max(1, round(spec.benign_rate * W / H))
    period = W / m
    for i in range(H):
        phase = float(rng.uniform(0.05, 0.95)) * period
        size = int(rng.integers(64, 1024))
        src, dst, direction = (host(i), FILE_SERVER, OUT) if i % 2 == 0 else (FILE_SERVER, host(i), IN)
        n = 0
        while (t := phase + n * period) < D:
            b.add(t, direction, src, dst, _data(f"{spec.seed}:h{i}:{n}", size))
            n += 1

    # busy host: a batch to the backup server in every even window
    B = burst_size(spec)
    busy_size = int(rng.integers(256, 1500))
    for k in range(0, n_windows, 2):
        for j in range(B):
            t = k * W + (j + 0.5) * W / B
            if t < D:
                b.add(t, OUT, host(0), BACKUP_SERVER, _data(f"{spec.seed}:busy:{k}:{j}", busy_size))

    # per-window housekeeping: one login session, one SYN, one log line
    d_lo = float(rng.uniform(20.0, 40.0))
    service_phase = float(rng.uniform(0.4, 0.6))
    for k in range(n_windows):
        base = k * W
        if base + 0.7 * W >= D:
            break
        even = k % 2 == 0
        b.add(base + service_phase * W, OUT, host(1), AUTH_SERVER,
              ConnectionRecord(2 * d_lo if even else d_lo, "ssh", 2 if even else 0))
        b.add(base + 0.3 * W, OUT, host(2), WEB_SERVER, TcpSyn(acked=True))
        b.add(base + 0.7 * W, OUT, host(3), LOG_SERVER,
              LogEntry("sshd", "session opened", {"user": "alice"}))

    # address assignment for every host, all inside the (quiet) second window
    for i in range(H):
        t0 = W + (i + 0.25) * 0.8 * W / H
        xid = int(rng.integers(0, 2 ** 32))
        client = host(i)
        b.add(t0, OUT, client, BROADCAST,
              _dhcp(op=1, xid=xid, client_mac=client.mac, message_type=DhcpMessageType.DISCOVER))
        b.add(t0 + 0.05, IN, LEGIT_SERVER, client, _legit_offer(xid, client.mac, client.ip))
        b.add(t0 + 0.10, OUT, client, BROADCAST,
              _dhcp(op=1, xid=xid, client_mac=client.mac, message_type=DhcpMessageType.REQUEST,
                    server_id=LEGIT_SERVER.ip))
        b.add(t0 + 0.15, IN, LEGIT_SERVER, client,
              _legit_offer(xid, client.mac, client.ip, DhcpMessageType.ACK))
    return b.trace(_meta(spec, "benign"))


def _spread(attack: AttackSpec, count: int) -> List[float]:
    step = (attack.end - attack.start) / count
    return [attack.start + (j + 0.5) * step for j in range(count)]


def gen_rogue_dhcp(spec: ScenarioSpec, attack: AttackSpec) -> EventTrace:
    """New clients each broadcast a Discover; a rogue answers ``lead_secs`` before the real server."""
    count = int(attack.get("count", 5))
    lead = float(attack.get("lead_secs", 0.2))
    wrong_router = bool(attack.get("wrong_router", True))
    if count < 0 or lead < 0:
        raise InvalidSpec("rogue_dhcp needs count >= 0 and lead_secs >= 0")
    rng = rng_for(spec.seed, "rogue_dhcp")
    b = _Builder()
    bad_gw = ROGUE_SERVER.ip if wrong_router else LEGIT_SERVER.ip
    for j, t in enumerate(_spread(attack, count) if count else []):
        xid = int(rng.integers(0, 2 ** 32))
        client = Endpoint(_fresh_mac(0x0C, j))
        b.add(t, OUT, client, BROADCAST,
              _dhcp(op=1, xid=xid, client_mac=client.mac, message_type=DhcpMessageType.DISCOVER))
        b.add(t + 0.01, IN, ROGUE_SERVER, client,
              _dhcp(op=2, xid=xid, client_mac=client.mac, message_type=DhcpMessageType.OFFER,
                    your_addr=IPv4Address(f"192.168.66.{10 + j % 200}"), server_addr=ROGUE_SERVER.ip,
                    server_id=ROGUE_SERVER.ip, router=bad_gw, dns=(bad_gw,), lease_secs=60),
              AttackClass.ROGUE_DHCP)
        b.add(t + 0.01 + lead, IN, LEGIT_SERVER, client,
              _legit_offer(xid, client.mac, IPv4Address(f"10.0.0.{200 + j % 50}")))
    return b.trace(_meta(spec, "rogue_dhcp"))


def gen_dos(spec: ScenarioSpec, attack: AttackSpec) -> EventTrace:
    """Bursts of unanswered SYNs from spoofed sources plus one replayed payload."""
    bursts = int(attack.get("bursts", 2))
    rate = float(attack.get("rate", 3000.0))
    burst_secs = float(attack.get("burst_secs", 0.5))
    acked = bool(attack.get("acked", False))
    if bursts < 0 or rate <= 0 or burst_secs <= 0:
        raise InvalidSpec("dos needs bursts >= 0, rate > 0, burst_secs > 0")
    rng = rng_for(spec.seed, "dos")
    b = _Builder()
    digest = payload_digest(f"{spec.seed}:dos-payload".encode())
    n = max(1, int(rate * burst_secs))
    spoof = 0
    for t0 in (_spread(attack, bursts) if bursts else []):
        offsets = np.sort(rng.uniform(0.0, burst_secs, size=n))
        for j, off in enumerate(offsets):
            t = t0 + float(off)
            if j % 2 == 0:
                b.add(t, IN, Endpoint(_fresh_mac(0x0D, spoof % 65536)), WEB_SERVER, TcpSyn(acked=acked),
                      AttackClass.DOS)
                spoof += 1
            else:
                b.add(t, IN, ATTACKER, FILE_SERVER, _data("", 512, acked=acked, digest=digest), AttackClass.DOS)
    return b.trace(_meta(spec, "dos"))


def gen_probe(spec: ScenarioSpec, attack: AttackSpec) -> EventTrace:
    """Packets that carry more bytes than they declare."""
    count = int(attack.get("count", 20))
    if count < 0:
        raise InvalidSpec("probe count must be >= 0")
    rng = rng_for(spec.seed, "probe")
    b = _Builder()
    for j, t in enumerate(_spread(attack, count) if count else []):
        declared = int(rng.integers(64, 512))
        extra = int(rng.integers(100, 1000))
        target = host(j % spec.host_count)
        b.add(t, IN, Endpoint(_fresh_mac(0x0E, j)), target,
              _data(f"{spec.seed}:probe:{j}", declared + extra, declared=declared), AttackClass.PROBE)
    return b.trace(_meta(spec, "probe"))


def gen_u2r(spec: ScenarioSpec, attack: AttackSpec) -> EventTrace:
    """Sessions held open far longer than any benign login."""
    count = int(attack.get("count", 3))
    duration = float(attack.get("duration_secs", 3600.0))
    if count < 0 or duration < 0:
        raise InvalidSpec("u2r needs count >= 0 and duration_secs >= 0")
    b = _Builder()
    for j, t in enumerate(_spread(attack, count) if count else []):
        b.add(t, OUT, Endpoint(_fresh_mac(0x0F, j)), AUTH_SERVER,
              ConnectionRecord(duration, str(attack.get("service", "ssh")), 0), AttackClass.U2R)
    return b.trace(_meta(spec, "u2r"))


def gen_r2l(spec: ScenarioSpec, attack: AttackSpec) -> EventTrace:
    """Remote sessions on an unusual service with many failed logins."""
    count = int(attack.get("count", 3))
    failed = int(attack.get("failed_logins", 40))
    if count < 0 or failed < 0:
        raise InvalidSpec("r2l needs count >= 0 and failed_logins >= 0")
    b = _Builder()
    for j, t in enumerate(_spread(attack, count) if count else []):
        b.add(t, IN, Endpoint(_fresh_mac(0x10, j)), AUTH_SERVER,
              ConnectionRecord(float(attack.get("duration_secs", 12.0)), str(attack.get("service", "rlogin")),
                               failed), AttackClass.R2L)
    return b.trace(_meta(spec, "r2l"))


GENERATORS = {
    AttackClass.ROGUE_DHCP: gen_rogue_dhcp,
    AttackClass.DOS: gen_dos,
    AttackClass.PROBE: gen_probe,
    AttackClass.U2R: gen_u2r,
    AttackClass.R2L: gen_r2l,
}


def mix(traces: Sequence[EventTrace], seed: int) -> EventTrace:
    """Merge by timestamp, renumber ids densely; ties broken by a seeded per-trace key."""
    rng = rng_for(seed, "mix")
    keys = rng.permutation(len(traces)) if traces else []
    tagged = []
    for t_idx, tr in enumerate(traces):
        for pos, ev in enumerate(tr.events):
            tagged.append((ev.timestamp, int(keys[t_idx]), pos, t_idx, ev))
    tagged.sort(key=lambda x: x[:3])
    new_id = {(t_idx, ev.id): i for i, (_, _, _, t_idx, ev) in enumerate(tagged)}
    events = []
    for i, (_, _, _, t_idx, ev) in enumerate(tagged):
        kind = ev.kind
        if isinstance(kind, DataPacket) and kind.retransmission_of is not None:
            kind = DataPacket(kind.payload_digest, kind.payload_len, new_id[(t_idx, kind.retransmission_of)],
                              kind.declared_len, kind.acked, kind.payload)
        events.append(NetworkEvent(i, ev.timestamp, ev.direction, ev.src, ev.dst, kind, ev.label))
    meta = {}
    for tr in traces:
        for k, v in tr.meta.items():
            meta.setdefault(k, v)
    meta.pop("part", None)
    meta["seed"] = str(seed)
    return EventTrace(tuple(events), meta)


def simulate(spec: ScenarioSpec) -> EventTrace:
    parts = [gen_benign(spec)]
    for attack in spec.attack_mix:
        parts.append(GENERATORS[attack.attack_class](spec, attack))
    out = mix(parts, spec.seed)
    return EventTrace(out.events, {**out.meta, "scenario": spec.name})


def manifest(spec: ScenarioSpec, trace: EventTrace) -> dict:
    return {
        "scenario": spec.name,
        "seed": spec.seed,
        "events": len(trace),
        "counts": {c.value: n for c, n in trace.label_counts().items()},
    }


def dumps_manifest(spec: ScenarioSpec, trace: EventTrace) -> str:
    return json.dumps(manifest(spec, trace), sort_keys=True, indent=2) + "\n"
