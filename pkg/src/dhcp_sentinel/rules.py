"""Detecting-server rule layer: the six parameterized ingredients.

Pre-selected rules run on inbound traffic, post-selected rules on outbound
traffic; the ``pre_selected``/``post_selected`` lists of
:class:`IngredientConfig` say which ingredients each phase applies.

:class:`RuleMonitor` is the incremental evaluator used by the pipeline.  The
``check_*`` helpers run a single ingredient over a batch of events and
:func:`evaluate_rules` runs everything over a whole trace.
"""
from __future__ import annotations

import enum
import hashlib
import math
from collections import OrderedDict, deque
from dataclasses import dataclass, fields, replace
from importlib import resources
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from ._compat import tomllib
from .codec import DhcpError, serialize_dhcp
from .trace import (
    DataPacket, DhcpFrame, Direction, EventTrace, NetworkEvent, Severity, TcpSyn,
)


class NoPayload(ValueError):
    pass


class RulePhase(str, enum.Enum):
    PRE_SELECTED = "pre_selected"
    POST_SELECTED = "post_selected"

    @classmethod
    def of(cls, direction: Direction) -> "RulePhase":
        return cls.PRE_SELECTED if direction is Direction.INBOUND else cls.POST_SELECTED


INGREDIENTS = ("validity", "time_interval", "flooding", "retransmission", "radio_range",
               "pattern_replication")


class Ingredient(str, enum.Enum):
    VALIDITY = "validity"
    EXHAUSTION_INTERVAL = "exhaustion_interval"
    NEGLIGENCE_INTERVAL = "negligence_interval"
    FLOODING = "flooding"
    RETRANSMISSION_MISS = "retransmission_miss"
    RADIO_RANGE = "radio_range"
    PATTERN_REPLICATION = "pattern_replication"


@dataclass(frozen=True)
class IngredientConfig:
    min_interval_secs: float
    max_interval_secs: float
    flood_rate_threshold: float
    flood_noise_ratio: float
    flood_window_secs: float
    retx_timeout_secs: float
    max_radio_range_m: float
    replication_k: int
    replication_window_secs: float
    pre_selected: Tuple[str, ...] = INGREDIENTS
    post_selected: Tuple[str, ...] = INGREDIENTS

    def __post_init__(self):
        object.__setattr__(self, "pre_selected", tuple(self.pre_selected))
        object.__setattr__(self, "post_selected", tuple(self.post_selected))
        if not 0 < self.min_interval_secs < self.max_interval_secs:
            raise ValueError("need 0 < min_interval_secs < max_interval_secs")
        for name in ("flood_rate_threshold", "flood_window_secs", "retx_timeout_secs",
                     "max_radio_range_m", "replication_window_secs"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.flood_noise_ratio <= 1:
            raise ValueError("flood_noise_ratio must be in (0, 1]")
        if self.replication_k < 2:
            raise ValueError("replication_k must be at least 2")
        for name in self.pre_selected + self.post_selected:
            if name not in INGREDIENTS:
                raise ValueError(f"unknown ingredient {name!r}")

    @classmethod
    def from_mapping(cls, section: Mapping) -> "IngredientConfig":
        """Build from a ``[monitor]`` section; absent keys take the shipped defaults."""
        known = {f.name for f in fields(cls)}
        unknown = set(section) - known
        if unknown:
            raise ValueError(f"unknown [monitor] keys: {sorted(unknown)}")
        return replace(cls.default(), **dict(section))

    @classmethod
    def default(cls) -> "IngredientConfig":
        return _default_config()

    def enabled(self, phase: RulePhase) -> Tuple[str, ...]:
        return self.pre_selected if phase is RulePhase.PRE_SELECTED else self.post_selected

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["pre_selected"] = list(self.pre_selected)
        d["post_selected"] = list(self.post_selected)
        return d


_DEFAULT: Optional[IngredientConfig] = None


def _default_config() -> IngredientConfig:
    global _DEFAULT
    if _DEFAULT is None:
        text = resources.files("dhcp_sentinel").joinpath("data/default_config.toml").read_text()
        section = tomllib.loads(text)["monitor"]
        _DEFAULT = IngredientConfig(**section)
    return _DEFAULT


@dataclass(frozen=True)
class RuleFinding:
    ingredient: Ingredient
    event_ids: Tuple[int, ...]
    severity: Severity
    detail: str
    timestamp: float

    def to_dict(self) -> dict:
        return {"ingredient": self.ingredient.value, "event_ids": list(self.event_ids),
                "severity": self.severity.value, "detail": self.detail, "ts": self.timestamp}

    @classmethod
    def from_dict(cls, d) -> "RuleFinding":
        return cls(Ingredient(d["ingredient"]), tuple(d["event_ids"]), Severity(d["severity"]),
                   d["detail"], d["ts"])


# -- single-event checks ----------------------------------------------------------

def _payload_bytes(event: NetworkEvent) -> bytes:
    kind = event.kind
    if isinstance(kind, DataPacket) and kind.payload is not None:
        return kind.payload
    if isinstance(kind, DhcpFrame):
        return kind.raw if kind.raw is not None else serialize_dhcp(kind.message)
    raise NoPayload(f"event {event.id} carries no digestible payload")


def check_validity(event: NetworkEvent, expected_digest) -> Optional[RuleFinding]:
    """Flag the event if its payload no longer hashes to ``expected_digest``.

    ``expected_digest`` is the 32-byte SHA-256 value, raw or hex-encoded.
    """
    if isinstance(expected_digest, str):
        expected_digest = bytes.fromhex(expected_digest)
    actual = hashlib.sha256(_payload_bytes(event)).digest()
    if actual == bytes(expected_digest):
        return None
    return RuleFinding(Ingredient.VALIDITY, (event.id,), Severity.HIGH,
                       "payload digest mismatch", event.timestamp)


def _validity_issue(event: NetworkEvent) -> Optional[str]:
    kind = event.kind
    if not isinstance(kind, DataPacket):
        return None
    problems = []
    if kind.payload is not None and hashlib.sha256(kind.payload).hexdigest() != kind.payload_digest:
        problems.append("payload digest mismatch")
    if kind.declared_len is not None and kind.payload_len > kind.declared_len:
        problems.append(f"payload_len {kind.payload_len} exceeds declared {kind.declared_len}")
    return "; ".join(problems) or None


def check_radio_range(event: NetworkEvent, cfg: IngredientConfig) -> Optional[RuleFinding]:
    src, dst = event.src, event.dst
    if src.position is None or dst.position is None:
        return None
    dist = math.dist(src.position, dst.position)
    limit = src.radio_range if src.radio_range is not None else cfg.max_radio_range_m
    if dist <= limit:
        return None
    what = "syn flood" if isinstance(event.kind, TcpSyn) else "wormhole"
    return RuleFinding(Ingredient.RADIO_RANGE, (event.id,), Severity.HIGH,
                       f"{what}: {dist:.1f} m exceeds range {limit:.1f} m", event.timestamp)


def is_malformed(event: NetworkEvent) -> bool:
    """Undecodable DHCP frames and packets that fail the validity ingredient."""
    if isinstance(event.kind, DhcpFrame):
        try:
            event.kind.decode()
        except DhcpError:
            return True
        return False
    return _validity_issue(event) is not None


# -- incremental evaluator ---------------------------------------------------------

class _Cluster:
    __slots__ = ("ids", "first_ts")

    def __init__(self, ids, first_ts):
        self.ids = list(ids)
        self.first_ts = first_ts


class RuleMonitor:
    """Feed events in timestamp order; collect findings with :meth:`drain`.

    State is per instance and confined to one pass over one trace.
    """

    def __init__(self, cfg: IngredientConfig):
        self.cfg = cfg
        self._findings: List[RuleFinding] = []
        self._last_in_flow: Dict[tuple, Tuple[float, int]] = {}
        self._flood_bin: Optional[int] = None
        self._flood_ids: List[int] = []
        self._flood_ts: float = 0.0
        self._flood_bad = 0
        self._pending: "OrderedDict[int, float]" = OrderedDict()
        self._replicas: Dict[str, deque] = {}
        self._clusters: Dict[str, _Cluster] = {}

    def _enabled(self, ev: NetworkEvent, ingredient: str) -> bool:
        return ingredient in self.cfg.enabled(RulePhase.of(ev.direction))

    def _emit(self, finding: RuleFinding) -> None:
        self._findings.append(finding)

    def observe(self, ev: NetworkEvent, malformed: Optional[bool] = None) -> None:
        if malformed is None:
            malformed = is_malformed(ev)
        self._expire_pending(ev.timestamp, inclusive=False)

        if self._enabled(ev, "validity"):
            issue = _validity_issue(ev)
            if issue:
                self._emit(RuleFinding(Ingredient.VALIDITY, (ev.id,), Severity.HIGH, issue, ev.timestamp))

        if self._enabled(ev, "time_interval"):
            self._observe_interval(ev)

        if self._enabled(ev, "flooding"):
            self._observe_flood(ev, malformed)

        if self._enabled(ev, "retransmission"):
            self._observe_retx(ev)

        if self._enabled(ev, "radio_range"):
            f = check_radio_range(ev, self.cfg)
            if f:
                self._emit(f)

        if self._enabled(ev, "pattern_replication") and isinstance(ev.kind, DataPacket):
            self._observe_replica(ev)

    def _observe_interval(self, ev: NetworkEvent) -> None:
        key = (ev.direction, ev.src.mac, ev.dst.mac)
        prev = self._last_in_flow.get(key)
        self._last_in_flow[key] = (ev.timestamp, ev.id)
        if prev is None:
            return
        gap = ev.timestamp - prev[0]
        if gap < self.cfg.min_interval_secs:
            self._emit(RuleFinding(Ingredient.EXHAUSTION_INTERVAL, (prev[1], ev.id), Severity.MEDIUM,
                                   f"interval {gap:.6f} s below {self.cfg.min_interval_secs} s", prev[0]))
        elif gap > self.cfg.max_interval_secs:
            self._emit(RuleFinding(Ingredient.NEGLIGENCE_INTERVAL, (prev[1], ev.id), Severity.LOW,
                                   f"interval {gap:.3f} s above {self.cfg.max_interval_secs} s", prev[0]))

    def _observe_flood(self, ev: NetworkEvent, malformed: bool) -> None:
        b = math.floor(ev.timestamp / self.cfg.flood_window_secs)
        if self._flood_bin is not None and b != self._flood_bin:
            self._close_flood_bin()
        if self._flood_bin is None:
            self._flood_bin, self._flood_ts = b, ev.timestamp
        self._flood_ids.append(ev.id)
        self._flood_bad += bool(malformed)

    def _close_flood_bin(self) -> None:
        if self._flood_ids:
            f = _flood_verdict(self._flood_ids, self._flood_bad, self._flood_ts,
                               self.cfg.flood_window_secs, self.cfg)
            if f:
                self._emit(f)
        self._flood_bin, self._flood_ids, self._flood_bad = None, [], 0

    def _observe_retx(self, ev: NetworkEvent) -> None:
        kind = ev.kind
        if not isinstance(kind, DataPacket):
            return
        orig = kind.retransmission_of
        if orig is not None and orig in self._pending:
            if ev.timestamp - self._pending[orig] <= self.cfg.retx_timeout_secs:
                del self._pending[orig]
        if not kind.acked:
            self._pending[ev.id] = ev.timestamp

    def _expire_pending(self, now: float, inclusive: bool) -> None:
        timeout = self.cfg.retx_timeout_secs
        while self._pending:
            eid, ts = next(iter(self._pending.items()))
            late = now - ts
            if late > timeout or (inclusive and late >= timeout):
                del self._pending[eid]
                self._emit(RuleFinding(Ingredient.RETRANSMISSION_MISS, (eid,), Severity.MEDIUM,
                                       f"no retransmission within {timeout} s", ts))
            else:
                break

    def _observe_replica(self, ev: NetworkEvent) -> None:
        digest = ev.kind.payload_digest
        dq = self._replicas.setdefault(digest, deque())
        dq.append((ev.timestamp, ev.id))
        while ev.timestamp - dq[0][0] > self.cfg.replication_window_secs:
            dq.popleft()
        cluster = self._clusters.get(digest)
        if len(dq) >= self.cfg.replication_k:
            if cluster is None:
                self._clusters[digest] = _Cluster((i for _, i in dq), dq[0][0])
            else:
                cluster.ids.append(ev.id)
        elif cluster is not None:
            self._finish_cluster(digest)

    def _finish_cluster(self, digest: str) -> None:
        c = self._clusters.pop(digest)
        self._emit(RuleFinding(Ingredient.PATTERN_REPLICATION, tuple(c.ids), Severity.HIGH,
                               f"payload {digest[:16]} repeated {len(c.ids)} times", c.first_ts))

    def close_window(self, window_end: float) -> None:
        """Settle everything decidable at ``window_end``: flood bin, replica runs, overdue packets."""
        self._close_flood_bin()
        for digest in sorted(self._clusters):
            self._finish_cluster(digest)
        # a retransmission arriving at or after window_end is already too late
        self._expire_pending(window_end, inclusive=False)

    def flush(self) -> None:
        """End of trace: nothing more will arrive, so unresolved packets are misses."""
        self._close_flood_bin()
        for digest in sorted(self._clusters):
            self._finish_cluster(digest)
        self._expire_pending(math.inf, inclusive=True)

    def drain(self) -> List[RuleFinding]:
        out, self._findings = self._findings, []
        return out


def _flood_verdict(ids, bad, ts, window_secs, cfg) -> Optional[RuleFinding]:
    n = len(ids)
    rate = n / window_secs
    noise = bad / n if n else 0.0
    reasons = []
    if rate > cfg.flood_rate_threshold:
        reasons.append(f"rate {rate:.1f}/s above {cfg.flood_rate_threshold}/s")
    if noise > cfg.flood_noise_ratio:
        reasons.append(f"malformed ratio {noise:.3f} above {cfg.flood_noise_ratio}")
    if not reasons:
        return None
    return RuleFinding(Ingredient.FLOODING, tuple(ids), Severity.HIGH, "; ".join(reasons), ts)


def _sorted(findings: Iterable[RuleFinding]) -> List[RuleFinding]:
    return sorted(findings, key=lambda f: (f.timestamp, min(f.event_ids, default=-1), f.ingredient.value))


def _only(cfg: IngredientConfig, ingredient: str) -> IngredientConfig:
    return replace(cfg, pre_selected=(ingredient,), post_selected=(ingredient,))


def _run(events: Iterable[NetworkEvent], cfg: IngredientConfig) -> List[RuleFinding]:
    mon = RuleMonitor(cfg)
    for ev in events:
        mon.observe(ev)
    mon.flush()
    return _sorted(mon.drain())


def check_time_interval(flow: Sequence[NetworkEvent], cfg: IngredientConfig) -> List[RuleFinding]:
    """Exhaustion/negligence findings for consecutive gaps of one src->dst flow.

    Gaps exactly equal to a bound are allowed.
    """
    return _run(flow, _only(cfg, "time_interval"))


def check_flooding(window: Sequence[NetworkEvent], cfg: IngredientConfig,
                   window_secs: Optional[float] = None) -> Optional[RuleFinding]:
    if not window:
        return None
    bad = sum(is_malformed(ev) for ev in window)
    return _flood_verdict([ev.id for ev in window], bad, window[0].timestamp,
                          window_secs or cfg.flood_window_secs, cfg)


def check_retransmission(flow: Sequence[NetworkEvent], cfg: IngredientConfig) -> List[RuleFinding]:
    return _run(flow, _only(cfg, "retransmission"))


def check_pattern_replication(window: Sequence[NetworkEvent], cfg: IngredientConfig) -> List[RuleFinding]:
    return _run(window, _only(cfg, "pattern_replication"))


def evaluate_rules(trace: EventTrace, cfg: Optional[IngredientConfig] = None) -> List[RuleFinding]:
    """All enabled ingredients over a whole trace, ordered by earliest referenced event."""
    return _run(trace.events, cfg or IngredientConfig.default())
