"""Central IDS: runs the three layers in order and keeps the alert log.

Per event the layers run strictly top-down and stop at the first layer that
alerts:

1. DHCP Offer/Ack frames go to the verifier; a rogue verdict alerts and stops.
2. Signature matching; any hit alerts (one alert per hit) and stops.
3. The anomaly layer.  Every event, including ones stopped above, feeds the
   window statistics and the rule monitor, but anomaly alerts only list
   events no upper layer has already claimed.  Alerts are produced when a
   window closes, which is driven by event timestamps only.

Each closed window gets one confusion outcome.  It is an alert window if any
anomaly alert was raised at its close.  It is an attack window if it holds an
attack-labeled event no upper layer claimed, or if one of those alerts lists
an attack-labeled event.
"""
from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Set, Tuple, Union

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .anomaly import (
    METRICS, Outcome, PickVerdict, ThresholdModel, classify_outcome, pick_detect, train_baseline,
    window_index,
)
from .codec import DhcpError
from .config import Config
from .report import DetectionReport, build_report
from .rules import IngredientConfig, Ingredient, RuleFinding, RuleMonitor
from .signatures import SignatureDb, SignatureHit, match_event
from .trace import (
    AttackClass, ConnectionRecord, DataPacket, DhcpFrame, EventTrace, NetworkEvent, Severity, TcpSyn,
)
from .validation import check_trace
from .verifier import OfferRaceDetector, RaceFinding, Verdict, Whitelist, verify_offer

log = logging.getLogger(__name__)


class StaleVersion(ValueError):
    pass


class EmptyPolicyUpdate(ValueError):
    pass


class Layer(str, enum.Enum):
    VERIFIER = "verifier"
    SIGNATURE = "signature"
    ANOMALY = "anomaly"


@dataclass(frozen=True)
class Alert:
    id: int
    timestamp: float
    layer: Layer
    attack_class: AttackClass
    severity: Severity
    event_ids: Tuple[int, ...]
    evidence: Union[Verdict, SignatureHit, RuleFinding, PickVerdict]
    window: Optional[int] = None

    def to_dict(self) -> dict:
        ev = self.evidence
        if isinstance(ev, Verdict):
            evidence = {"type": "verdict", "reasons": [r.value for r in ev.reasons]}
        elif isinstance(ev, SignatureHit):
            evidence = {"type": "signature_hit", "signature_id": ev.signature_id,
                        "matched_fields": [[p, v] for p, v in ev.matched_fields]}
        elif isinstance(ev, RuleFinding):
            evidence = {"type": "rule_finding", **ev.to_dict()}
        else:
            evidence = {"type": "pick_detect", "metrics_exceeded": list(ev.metrics_exceeded),
                        "values": {m: ev.values[m] for m in METRICS}}
        d = {"id": self.id, "ts": self.timestamp, "layer": self.layer.value,
             "class": self.attack_class.value, "severity": self.severity.value,
             "event_ids": list(self.event_ids), "evidence": evidence}
        if self.window is not None:
            d["window"] = self.window
        return d


def dumps_alerts(alerts: Iterable[Alert]) -> str:
    return "".join(json.dumps(a.to_dict(), sort_keys=True, separators=(",", ":")) + "\n" for a in alerts)


@dataclass(frozen=True)
class PolicyUpdate:
    version: int
    new_whitelist: Optional[Whitelist] = None
    new_signature_db: Optional[SignatureDb] = None
    new_ingredient_cfg: Optional[IngredientConfig] = None
    new_threshold_model: Optional[ThresholdModel] = None

    def __post_init__(self):
        if all(getattr(self, f) is None for f in
               ("new_whitelist", "new_signature_db", "new_ingredient_cfg", "new_threshold_model")):
            raise EmptyPolicyUpdate("a policy update must change at least one layer")


_RULE_CLASS = {
    Ingredient.VALIDITY: AttackClass.PROBE,
    Ingredient.EXHAUSTION_INTERVAL: AttackClass.DOS,
    Ingredient.NEGLIGENCE_INTERVAL: AttackClass.DOS,
    Ingredient.FLOODING: AttackClass.DOS,
    Ingredient.RETRANSMISSION_MISS: AttackClass.DOS,
    Ingredient.PATTERN_REPLICATION: AttackClass.DOS,
}


def _rule_class(finding: RuleFinding) -> AttackClass:
    if finding.ingredient is Ingredient.RADIO_RANGE:
        return AttackClass.DOS if finding.detail.startswith("syn flood") else AttackClass.R2L
    return _RULE_CLASS[finding.ingredient]


class CentralState:
    """Policy, per-layer configuration, window state and the append-only alert log."""

    def __init__(self, whitelist: Whitelist, signature_db: SignatureDb,
                 ingredient_cfg: IngredientConfig, threshold_model: Optional[ThresholdModel] = None,
                 window_secs: float = 5.0, version: int = 0):
        if threshold_model is not None:
            window_secs = threshold_model.window_secs
        self.version = version
        self.whitelist = whitelist
        self.signature_db = signature_db
        self.ingredient_cfg = ingredient_cfg
        self.threshold_model = threshold_model
        self.window_secs = window_secs
        self.alerts: List[Alert] = []
        self.outcomes: List[Outcome] = []
        self.malformed: Set[int] = set()
        self._monitor = RuleMonitor(ingredient_cfg)
        self._races = OfferRaceDetector(whitelist)
        self._window: Optional[int] = None
        self._window_events: List[NetworkEvent] = []
        # ids stopped by the verifier or signature layer, for the whole run
        self._claimed: Set[int] = set()
        # ground truth for window outcomes; never consulted by any detection layer
        self._attack_ids: Set[int] = set()

    @classmethod
    def from_config(cls, cfg: Config) -> "CentralState":
        return cls(cfg.whitelist, cfg.signature_db, cfg.ingredient_cfg, cfg.threshold_model,
                   cfg.window_secs)

    # -- policy ------------------------------------------------------------------

    def apply_policy(self, update: PolicyUpdate) -> "CentralState":
        if update.version <= self.version:
            raise StaleVersion(f"update version {update.version} is not above {self.version}")
        model = update.new_threshold_model
        if model is not None and model.window_secs != self.window_secs:
            raise ValueError("a new threshold model must keep the current window length")
        # swap everything at once, between events
        if update.new_whitelist is not None:
            self.whitelist = update.new_whitelist
            self._races.whitelist = update.new_whitelist
        if update.new_signature_db is not None:
            self.signature_db = update.new_signature_db.with_version(update.version)
        if update.new_ingredient_cfg is not None:
            self.ingredient_cfg = update.new_ingredient_cfg
            self._monitor.cfg = update.new_ingredient_cfg
        if model is not None:
            self.threshold_model = model
        self.version = update.version
        return self

    # -- event processing ----------------------------------------------------------

    def _alert(self, ts, layer, cls, severity, event_ids, evidence, window=None) -> Alert:
        a = Alert(len(self.alerts), ts, layer, cls, severity, tuple(event_ids), evidence, window)
        self.alerts.append(a)
        return a

    def process(self, event: NetworkEvent) -> List[Alert]:
        new: List[Alert] = []
        w = window_index(event.timestamp, self.window_secs)
        if self._window is None:
            self._window = w
        while w > self._window:
            new += self._close_window()
            self._window += 1

        malformed = False
        stopped = False
        if isinstance(event.kind, DhcpFrame):
            try:
                msg = event.kind.decode()
            except DhcpError as exc:
                log.debug("event %s: undecodable DHCP frame (%s)", event.id, exc)
                malformed = True
                self.malformed.add(event.id)
                msg = None
            if msg is not None and msg.is_offer_like:
                verdict = verify_offer(msg, event.src, self.whitelist)
                self._races.observe(event, msg, verdict)
                if verdict.rogue:
                    new.append(self._alert(event.timestamp, Layer.VERIFIER, AttackClass.ROGUE_DHCP,
                                           Severity.HIGH, (event.id,), verdict))
                    stopped = True
                else:
                    log.info("safe-offer forwarded: xid=%08x yiaddr=%s server=%s",
                             msg.xid, msg.your_addr, msg.server_id)

        if not stopped and not malformed:
            hits = match_event(event, self.signature_db)
            sigs = {s.id: s for s in self.signature_db.signatures}
            for hit in hits:
                sig = sigs[hit.signature_id]
                new.append(self._alert(event.timestamp, Layer.SIGNATURE, sig.attack_class, sig.severity,
                                       (event.id,), hit))
            stopped = bool(hits)

        if stopped:
            self._claimed.add(event.id)
        if event.is_attack:
            self._attack_ids.add(event.id)
        self._window_events.append(event)
        self._monitor.observe(event, malformed=True if malformed else None)
        return new

    def _close_window(self) -> List[Alert]:
        w = self._window
        events = self._window_events
        end = (w + 1) * self.window_secs
        self._monitor.close_window(end)
        findings = self._monitor.drain()
        claimed = self._claimed
        new: List[Alert] = []

        if self.threshold_model is not None:
            verdict = pick_detect(events, self.threshold_model)
            if verdict.alert:
                new += self._metric_alerts(verdict, events, claimed, w, end)

        merged: Dict[Tuple[Ingredient, AttackClass], List[RuleFinding]] = {}
        for f in findings:
            merged.setdefault((f.ingredient, _rule_class(f)), []).append(f)
        for (ingredient, cls), group in sorted(merged.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
            ids = sorted({i for f in group for i in f.event_ids} - claimed)
            if not ids:
                continue
            first = min(group, key=lambda f: f.timestamp)
            severity = max((f.severity for f in group), key=lambda s: list(Severity).index(s))
            finding = RuleFinding(ingredient, tuple(ids), severity,
                                  first.detail if len(group) == 1 else f"{len(group)} findings; first: {first.detail}",
                                  first.timestamp)
            new.append(self._alert(end, Layer.ANOMALY, cls, severity, ids, finding, w))

        alerted = any(a.layer is Layer.ANOMALY for a in new)
        # a finding that matures after its window (retransmission timeout) still
        # makes this window's verdict about those attack events
        attack = any(ev.is_attack and ev.id not in claimed for ev in events) or any(
            i in self._attack_ids for a in new for i in a.event_ids)
        self.outcomes.append(classify_outcome(alerted, attack))
        self._window_events = []
        return new

    def _metric_alerts(self, verdict: PickVerdict, events, claimed, w, end) -> List[Alert]:
        model = self.threshold_model
        exceeded = set(verdict.metrics_exceeded)
        open_events = [ev for ev in events if ev.id not in claimed]
        groups: Dict[AttackClass, List[int]] = {}
        if exceeded & {"events_per_sec", "syn_unacked_ratio", "distinct_payloads_per_window"}:
            groups[AttackClass.DOS] = [ev.id for ev in open_events
                                       if isinstance(ev.kind, (TcpSyn, DataPacket))] or \
                                      [ev.id for ev in open_events]
        if "bytes_per_sec" in exceeded and AttackClass.DOS not in groups:
            groups[AttackClass.PROBE] = [ev.id for ev in open_events if isinstance(ev.kind, DataPacket)]
        if "connection_duration_secs" in exceeded:
            limit = model.threshold("connection_duration_secs")
            groups[AttackClass.U2R] = [ev.id for ev in open_events if isinstance(ev.kind, ConnectionRecord)
                                       and ev.kind.duration_secs > limit]
        if "failed_logins_per_window" in exceeded:
            groups[AttackClass.R2L] = [ev.id for ev in open_events if isinstance(ev.kind, ConnectionRecord)
                                       and ev.kind.failed_logins > 0]
        # a group left empty by claimed events has nothing for this layer to report
        return [self._alert(end, Layer.ANOMALY, cls, Severity.MEDIUM, ids, verdict, w)
                for cls, ids in groups.items() if ids]

    def finish(self) -> List[Alert]:
        """Close the trailing (possibly partial) window and settle the rule monitor."""
        if self._window is None:
            return []
        self._monitor.flush()
        return self._close_window()

    def race_findings(self) -> List[RaceFinding]:
        return self._races.findings()


def process_event(event: NetworkEvent, state: CentralState) -> List[Alert]:
    return state.process(event)


def apply_policy(update: PolicyUpdate, state: CentralState) -> CentralState:
    return state.apply_policy(update)


@dataclass
class RunResult:
    alerts: List[Alert]
    report: DetectionReport
    races: List[RaceFinding]
    outcomes: List[Outcome]


def run(trace: EventTrace, config: Optional[Config] = None) -> RunResult:
    config = config or Config()
    state = CentralState.from_config(config)
    for ev in trace.events:
        state.process(ev)
    state.finish()
    report = build_report(trace, state.alerts, state.outcomes, state.malformed,
                          config.fail_safe_inconclusive)
    return RunResult(state.alerts, report, state.race_findings(), state.outcomes)


class SentinelIDS(BaseEstimator):
    """Estimator wrapper around the full three-layer pipeline.

    ``fit`` trains the pick-detect baseline on a benign trace.  ``predict``
    returns, per event, the class of the alert that claimed it or ``"benign"``.
    ``score`` is the overall efficiency as a fraction (nan when the trace has
    no labeled attacks).
    """

    def __init__(self, whitelist=None, signature_db=None, ingredient_config=None,
                 window_secs=5.0, k_sigma=3.0, fail_safe_inconclusive=True):
        self.whitelist = whitelist
        self.signature_db = signature_db
        self.ingredient_config = ingredient_config
        self.window_secs = window_secs
        self.k_sigma = k_sigma
        self.fail_safe_inconclusive = fail_safe_inconclusive

    def _config(self, model: Optional[ThresholdModel]) -> Config:
        base = Config()
        return Config(
            whitelist=self.whitelist if self.whitelist is not None else base.whitelist,
            signature_db=self.signature_db if self.signature_db is not None else base.signature_db,
            ingredient_cfg=self.ingredient_config if self.ingredient_config is not None else base.ingredient_cfg,
            threshold_model=model,
            window_secs=self.window_secs,
            k_sigma=self.k_sigma,
            fail_safe_inconclusive=self.fail_safe_inconclusive,
        )

    def fit(self, X, y=None):
        self.threshold_model_ = train_baseline(check_trace(X), self.window_secs, self.k_sigma)
        return self

    def run(self, X) -> RunResult:
        check_is_fitted(self, "threshold_model_")
        return run(check_trace(X), self._config(self.threshold_model_))

    def predict(self, X):
        trace = check_trace(X)
        result = self.run(trace)
        claimed: Dict[int, str] = {}
        for a in result.alerts:
            for eid in a.event_ids:
                claimed.setdefault(eid, a.attack_class.value)
        return np.array([claimed.get(ev.id, AttackClass.BENIGN.value) for ev in trace.events], dtype=object)

    def score(self, X, y=None) -> float:
        eff = self.run(X).report.efficiency_pct
        return float("nan") if eff is None else float(eff) / 100.0
