from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from conftest import FIXTURES, ROOT, data, ev
from dhcp_sentinel.anomaly import ConfusionCounts, Outcome, SignVerdict
from dhcp_sentinel.pipeline import Alert, Layer, run
from dhcp_sentinel.report import (
    TABLE_ROWS, DetectionReport, ReconciliationError, ZeroTga, build_report, efficiency, format_pct,
    parse_report, render_report,
)
from dhcp_sentinel.simulate import load_scenario, simulate
from dhcp_sentinel.trace import AttackClass, EventTrace, LogEntry, Severity, TcpSyn


def test_efficiency_examples():
    assert efficiency(10, 10, 0, 0, 20) == 100
    assert efficiency(10, 10, 5, 5, 20) == 50
    assert efficiency(42003, 45002, 2, 1, 87005) == Fraction(8700200, 87005)


def test_zero_tga():
    with pytest.raises(ZeroTga):
        efficiency(0, 0, 0, 0, 0)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(0, 10 ** 6), st.integers(0, 100), st.integers(0, 100),
       st.integers(1, 10 ** 6), st.integers(1, 1000))
def test_efficiency_scale_invariant(tsa, taa, msa, maa, tga, c):
    assert efficiency(tsa, taa, msa, maa, tga) == efficiency(c * tsa, c * taa, c * msa, c * maa, c * tga)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(0, 10 ** 6), st.integers(0, 100), st.integers(1, 10 ** 6))
def test_efficiency_strictly_decreasing_in_misses(tsa, taa, misses, tga):
    assert efficiency(tsa, taa, misses + 1, 0, tga) < efficiency(tsa, taa, misses, 0, tga)
    assert efficiency(tsa, taa, 0, misses + 1, tga) < efficiency(tsa, taa, 0, misses, tga)


def test_format_pct():
    assert format_pct(None) == "n/a"
    assert format_pct(Fraction(8700200, 87005)) == "99.9966"


def _alert(i, cls, layer, ids):
    return Alert(i, 0.0, layer, cls, Severity.HIGH, tuple(ids), None)


def test_all_captured_fixture():
    events = [ev(i, float(i), LogEntry("telnet", "", {"user": "root"}), label=AttackClass.R2L) for i in range(3)]
    events += [ev(3 + i, 3.0 + i, data(f"d{i}", 10, declared_len=5), label=AttackClass.PROBE) for i in range(2)]
    events.append(ev(5, 6.0, TcpSyn()))
    trace = EventTrace(tuple(events))
    alerts = [_alert(i, AttackClass.R2L, Layer.SIGNATURE, [i]) for i in range(3)]
    alerts += [_alert(3, AttackClass.PROBE, Layer.ANOMALY, [3, 4]), _alert(4, AttackClass.PROBE, Layer.ANOMALY, [3])]
    r = build_report(trace, alerts, [Outcome.TP, Outcome.TN])
    assert (r.tsa, r.taa, r.msa, r.maa) == (3, 2, 0, 0)
    assert r.efficiency_pct == 100
    assert (r.alerted_events, r.clean_events) == (5, 1)
    assert r.captured[AttackClass.PROBE] == 2


def test_wrong_class_is_not_a_capture():
    trace = EventTrace((ev(0, 0.0, data(), label=AttackClass.PROBE),))
    r = build_report(trace, [_alert(0, AttackClass.DOS, Layer.ANOMALY, [0])], [Outcome.TP])
    assert r.maa == 1 and r.efficiency_pct == 0


def test_inconclusive_escalated():
    trace = EventTrace((ev(0, 0.0, TcpSyn()),))
    outcomes = [Outcome.TN, Outcome.FN]
    assert build_report(trace, [], outcomes).st_summary.verdict is SignVerdict.ATTACK
    assert build_report(trace, [], outcomes, fail_safe_inconclusive=False).st_summary.verdict is (
        SignVerdict.INCONCLUSIVE)


def test_reconciliation_enforced():
    with pytest.raises(ReconciliationError):
        DetectionReport(received=3, analyzed=3, clean_events=1).check()
    with pytest.raises(ReconciliationError):
        DetectionReport(windows=2, confusion=ConfusionCounts(tn=1)).check()


@pytest.fixture(scope="module")
def rogue_report():
    with open(ROOT / "scenarios" / "rogue-race.toml", "rb") as fh:
        return run(simulate(load_scenario(fh))).report


def test_json_roundtrip(rogue_report):
    assert parse_report(render_report(rogue_report, "json")) == rogue_report


def test_text_golden(rogue_report):
    assert render_report(rogue_report) == (FIXTURES / "rogue_race_report.txt").read_bytes()


def test_table_has_every_row(rogue_report):
    text = render_report(rogue_report).decode()
    for label in TABLE_ROWS:
        assert label in text


def test_empty_report_renders():
    r = run(EventTrace(())).report
    assert "n/a" in render_report(r).decode()
    assert parse_report(render_report(r, "json")) == r


def test_unknown_format():
    with pytest.raises(ValueError):
        render_report(DetectionReport(), "xml")
