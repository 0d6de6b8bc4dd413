"""Detection accounting, overall efficiency and report rendering.

Overall efficiency is ``((TSA + TAA) - (MSA + MAA)) * 100 / TGA``: the share of
generated attacks that were captured.  The grouping of the subtraction is the
one that turns the published per-layer counts (42003 + 45002 generated, 2 + 1
missed) into the published 99.996 %.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, Mapping, Optional, Sequence

from .anomaly import AttackSign, ConfusionCounts, Outcome, SignVerdict, attack_sign, outcome_mean
from .trace import AttackClass, DhcpFrame, EventTrace, LogEntry, NetworkEvent

ATTACK_CLASSES = tuple(c for c in AttackClass if c.is_attack)


class ZeroTga(ValueError):
    pass


class ReconciliationError(AssertionError):
    pass


def efficiency(tsa: int, taa: int, msa: int, maa: int, tga: int) -> Fraction:
    """Overall efficiency in percent, as an exact fraction."""
    if tga <= 0:
        raise ZeroTga("total generated attacks must be positive")
    return Fraction((tsa + taa) - (msa + maa)) * 100 / tga


def format_pct(value: Optional[Fraction], places: int = 4) -> str:
    if value is None:
        return "n/a"
    return f"{float(value):.{places}f}"


def is_signature_type(ev: NetworkEvent) -> bool:
    """Attacks that the verifier or signature layer is positioned to see."""
    return isinstance(ev.kind, (DhcpFrame, LogEntry))


@dataclass(frozen=True)
class DetectionReport:
    received: int = 0
    analyzed: int = 0
    alerted_events: int = 0
    clean_events: int = 0
    malformed_events: int = 0
    windows: int = 0
    alerts_by_layer: Mapping[str, int] = field(default_factory=dict)
    generated: Mapping[AttackClass, int] = field(default_factory=dict)
    captured: Mapping[AttackClass, int] = field(default_factory=dict)
    tsa: int = 0
    taa: int = 0
    msa: int = 0
    maa: int = 0
    confusion: ConfusionCounts = ConfusionCounts()
    anomaly_rates: Optional[Mapping[Outcome, Fraction]] = None
    st_summary: Optional[AttackSign] = None
    efficiency_pct: Optional[Fraction] = None

    @property
    def tga(self) -> int:
        return self.tsa + self.taa

    def check(self) -> None:
        if self.analyzed > self.received:
            raise ReconciliationError("analyzed exceeds received")
        if self.analyzed != self.clean_events + self.alerted_events + self.malformed_events:
            raise ReconciliationError("analyzed != clean + alerted + malformed")
        if self.confusion.total != self.windows:
            raise ReconciliationError("confusion total != closed windows")

    def to_dict(self) -> dict:
        return {
            "format": "dsent-report/1",
            "received": self.received,
            "analyzed": self.analyzed,
            "alerted_events": self.alerted_events,
            "clean_events": self.clean_events,
            "malformed_events": self.malformed_events,
            "windows": self.windows,
            "alerts_by_layer": dict(self.alerts_by_layer),
            "generated": {c.value: n for c, n in self.generated.items()},
            "captured": {c.value: n for c, n in self.captured.items()},
            "tsa": self.tsa, "taa": self.taa, "msa": self.msa, "maa": self.maa, "tga": self.tga,
            "confusion": self.confusion.to_dict(),
            "anomaly_rates": None if self.anomaly_rates is None
            else {o.value: str(r) for o, r in self.anomaly_rates.items()},
            "st_summary": None if self.st_summary is None else self.st_summary.to_dict(),
            "efficiency_pct": None if self.efficiency_pct is None else str(self.efficiency_pct),
            "efficiency_display": format_pct(self.efficiency_pct),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DetectionReport":
        return cls(
            received=d["received"], analyzed=d["analyzed"], alerted_events=d["alerted_events"],
            clean_events=d["clean_events"], malformed_events=d["malformed_events"],
            windows=d["windows"], alerts_by_layer=dict(d["alerts_by_layer"]),
            generated={AttackClass(c): n for c, n in d["generated"].items()},
            captured={AttackClass(c): n for c, n in d["captured"].items()},
            tsa=d["tsa"], taa=d["taa"], msa=d["msa"], maa=d["maa"],
            confusion=ConfusionCounts(**d["confusion"]),
            anomaly_rates=None if d["anomaly_rates"] is None
            else {Outcome(o): Fraction(r) for o, r in d["anomaly_rates"].items()},
            st_summary=None if d["st_summary"] is None else AttackSign.from_dict(d["st_summary"]),
            efficiency_pct=None if d["efficiency_pct"] is None else Fraction(d["efficiency_pct"]),
        )


def build_report(trace: EventTrace, alerts: Sequence, outcomes: Sequence[Outcome],
                 malformed_ids: Iterable[int] = (), fail_safe_inconclusive: bool = True) -> DetectionReport:
    """Assemble a report from one pipeline run.

    A labeled attack event is captured when some alert of the same class lists
    it among its events; several alerts on one event still count once.
    """
    alerted = set()
    caught = set()
    by_layer: Dict[str, int] = {}
    for a in alerts:
        alerted.update(a.event_ids)
        by_layer[a.layer.value] = by_layer.get(a.layer.value, 0) + 1
        for eid in a.event_ids:
            caught.add((eid, a.attack_class))
    malformed = set(malformed_ids) - alerted

    generated = {c: 0 for c in ATTACK_CLASSES}
    captured = {c: 0 for c in ATTACK_CLASSES}
    tsa = taa = msa = maa = 0
    for ev in trace.events:
        if not ev.is_attack:
            continue
        generated[ev.label] += 1
        hit = (ev.id, ev.label) in caught
        captured[ev.label] += hit
        if is_signature_type(ev):
            tsa += 1
            msa += not hit
        else:
            taa += 1
            maa += not hit

    confusion = ConfusionCounts.from_outcomes(outcomes)
    st = None
    rates = None
    if outcomes:
        rates = outcome_mean(list(outcomes))
        st = attack_sign(confusion.tn, confusion.fn)
        if fail_safe_inconclusive and st.verdict is SignVerdict.INCONCLUSIVE:
            st = AttackSign(st.st_value, SignVerdict.ATTACK)
    eff = efficiency(tsa, taa, msa, maa, tsa + taa) if tsa + taa else None

    n = len(trace.events)
    n_alerted = len(alerted & {ev.id for ev in trace.events})
    report = DetectionReport(
        received=n, analyzed=n, alerted_events=n_alerted,
        clean_events=n - n_alerted - len(malformed), malformed_events=len(malformed),
        windows=len(outcomes), alerts_by_layer=dict(sorted(by_layer.items())),
        generated=generated, captured=captured, tsa=tsa, taa=taa, msa=msa, maa=maa,
        confusion=confusion, anomaly_rates=rates, st_summary=st, efficiency_pct=eff,
    )
    report.check()
    return report


TABLE_ROWS = (
    "total no. of packets received",
    "total no. of packets analyzed",
    "total no. of attacks generated",
    "signature based attacks generated",
    "anomaly based attacks generated",
    "total no. of attacks captured",
    "anomaly based attacks captured",
    "  a. false positive",
    "  b. false negative",
    "  c. true positive",
    "  d. true negative",
    "signature based attacks captured",
    "overall efficiency (%)",
)


def _table(report: DetectionReport) -> str:
    c = report.confusion
    st = report.st_summary
    values = (
        report.received, report.analyzed, report.tga, report.tsa, report.taa,
        report.tga - report.msa - report.maa, report.taa - report.maa,
        c.fp, c.fn, c.tp, c.tn, report.tsa - report.msa, format_pct(report.efficiency_pct),
    )
    width = max(len(r) for r in TABLE_ROWS)
    lines = [f"{'parameter':<{width}}  value", f"{'-' * width}  -----"]
    lines += [f"{label:<{width}}  {value}" for label, value in zip(TABLE_ROWS, values)]
    lines.append("")
    lines.append("per-class generated / captured:")
    for cls in ATTACK_CLASSES:
        lines.append(f"  {cls.value:<10} {report.generated.get(cls, 0):>8} {report.captured.get(cls, 0):>8}")
    lines.append("")
    lines.append(f"events: alerted={report.alerted_events} clean={report.clean_events} "
                 f"malformed={report.malformed_events}")
    lines.append("alerts by layer: " + (", ".join(f"{k}={v}" for k, v in report.alerts_by_layer.items())
                                         or "none"))
    lines.append(f"anomaly windows: {report.windows}")
    if st is not None:
        st_text = "inf" if st.st_value == float("inf") else f"{float(st.st_value):.4f}"
        lines.append(f"attack sign ST: {st_text} ({st.verdict.value})")
    else:
        lines.append("attack sign ST: n/a")
    return "\n".join(lines) + "\n"


def render_report(report: DetectionReport, fmt: str = "text") -> bytes:
    if fmt == "text":
        return _table(report).encode("utf-8")
    if fmt == "json":
        return (json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n").encode("utf-8")
    raise ValueError(f"unknown report format {fmt!r}")


def parse_report(data: bytes) -> DetectionReport:
    return DetectionReport.from_dict(json.loads(data))
