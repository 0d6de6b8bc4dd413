import hashlib
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

import ingredient_fixtures as fx
from conftest import data, ep, ev
from dhcp_sentinel.rules import (
    INGREDIENTS, Ingredient, IngredientConfig, NoPayload, RuleFinding, RuleMonitor,
    check_flooding, check_pattern_replication, check_radio_range, check_retransmission,
    check_time_interval, check_validity, evaluate_rules,
)
from dhcp_sentinel.trace import DataPacket, Direction, Endpoint, EventTrace, TcpSyn, payload_digest


def test_shipped_defaults(cfg):
    assert (cfg.min_interval_secs, cfg.max_interval_secs) == (0.01, 30.0)
    assert (cfg.flood_rate_threshold, cfg.flood_noise_ratio) == (500.0, 0.05)
    assert (cfg.retx_timeout_secs, cfg.max_radio_range_m) == (3.0, 250.0)
    assert (cfg.replication_k, cfg.replication_window_secs) == (50, 10.0)
    assert cfg.pre_selected == cfg.post_selected == INGREDIENTS


@pytest.mark.parametrize("bad", [
    dict(min_interval_secs=0.0), dict(min_interval_secs=40.0), dict(flood_rate_threshold=0.0),
    dict(replication_k=1), dict(flood_noise_ratio=0.0), dict(pre_selected=("telepathy",)),
])
def test_config_invariants(cfg, bad):
    with pytest.raises(ValueError):
        replace(cfg, **bad)


def test_from_mapping_rejects_unknown_keys():
    with pytest.raises(ValueError):
        IngredientConfig.from_mapping({"flood_treshold": 3})
    assert IngredientConfig.from_mapping({"replication_k": 5}).replication_k == 5


# -- the ingredient matrix -----------------------------------------------------

@pytest.mark.parametrize("name", list(fx.MATRIX))
def test_each_fixture_fires_exactly_its_ingredient(name, cfg):
    build, expected = fx.MATRIX[name]
    findings = evaluate_rules(build(), cfg)
    assert [f.ingredient for f in findings] == [expected]


def test_combined_fixture_six_findings(cfg):
    findings = evaluate_rules(fx.combined(), cfg)
    assert sorted(f.ingredient.value for f in findings) == sorted(
        e.value for _, e in fx.MATRIX.values())


def test_benign_baseline_is_silent(benign_300, cfg):
    assert evaluate_rules(benign_300, cfg) == []


def test_evaluate_rules_deterministic(cfg):
    t = fx.combined()
    assert evaluate_rules(t, cfg) == evaluate_rules(t, cfg)


def test_findings_sorted_by_earliest_event(cfg):
    ts = [f.timestamp for f in evaluate_rules(fx.combined(), cfg)]
    assert ts == sorted(ts)


# -- validity -------------------------------------------------------------------

def test_validity_untampered():
    e = ev(0, 1.0, DataPacket(payload_digest(b"abc"), 3, payload=b"abc"))
    assert check_validity(e, hashlib.sha256(b"abc").digest()) is None


def test_validity_flipped_byte():
    e = ev(0, 1.0, DataPacket(payload_digest(b"abc"), 3, payload=b"abd"))
    f = check_validity(e, hashlib.sha256(b"abc").hexdigest())
    assert f.ingredient is Ingredient.VALIDITY and f.event_ids == (0,)


def test_validity_empty_payload():
    e = ev(0, 1.0, DataPacket(payload_digest(b""), 0, payload=b""))
    assert check_validity(e, hashlib.sha256(b"").digest()) is None


def test_validity_needs_payload():
    with pytest.raises(NoPayload):
        check_validity(ev(0, 1.0, TcpSyn()), bytes(32))


def test_validity_covers_oversized_payload(cfg):
    t = EventTrace((ev(0, 1.0, data("x", 300, declared_len=100)),) +
                   tuple(ev(i, 1.0 + i / 100, TcpSyn(), src=ep(100 + i)) for i in range(1, 30)))
    assert [f.ingredient for f in evaluate_rules(t, cfg)] == [Ingredient.VALIDITY]


# -- time interval --------------------------------------------------------------

def test_interval_example(cfg):
    c = replace(cfg, min_interval_secs=0.5, max_interval_secs=5.0)
    flow = [ev(0, 0.0, TcpSyn()), ev(1, 0.1, TcpSyn()), ev(2, 10.1, TcpSyn())]
    assert sorted(f.ingredient.value for f in check_time_interval(flow, c)) == [
        "exhaustion_interval", "negligence_interval"]


def test_interval_single_event(cfg):
    assert check_time_interval([ev(0, 0.0, TcpSyn())], cfg) == []


def test_interval_bounds_allowed(cfg):
    c = replace(cfg, min_interval_secs=0.5, max_interval_secs=5.0)
    flow = [ev(0, 0.0, TcpSyn()), ev(1, 0.5, TcpSyn()), ev(2, 5.5, TcpSyn())]
    assert check_time_interval(flow, c) == []


def test_interval_is_per_flow(cfg):
    flow = [ev(0, 0.0, TcpSyn(), src=ep(1)), ev(1, 0.001, TcpSyn(), src=ep(2))]
    assert check_time_interval(flow, cfg) == []


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 64 * 40), min_size=1, max_size=15), st.integers(0, 5000))
def test_interval_shift_invariant(gaps, shift):
    c = IngredientConfig.default()
    ts = [sum(gaps[:i + 1]) / 64 for i in range(len(gaps))]
    flow = [ev(i, t, TcpSyn()) for i, t in enumerate(ts)]
    moved = [ev(i, t + shift, TcpSyn()) for i, t in enumerate(ts)]
    strip = lambda fs: [(f.ingredient, f.event_ids) for f in fs]
    assert strip(check_time_interval(flow, c)) == strip(check_time_interval(moved, c))


# -- flooding -------------------------------------------------------------------

def test_flooding_empty(cfg):
    assert check_flooding([], cfg) is None


def test_flooding_rate(cfg):
    window = [ev(i, i / 1000, TcpSyn()) for i in range(1000)]
    f = check_flooding(window, replace(cfg, flood_rate_threshold=100.0), window_secs=1.0)
    assert f.ingredient is Ingredient.FLOODING


def test_flooding_noise_ratio(cfg):
    window = [ev(i, i / 100, data(f"p{i}", 10, declared_len=5 if i % 10 == 0 else 10)) for i in range(100)]
    assert check_flooding(window, cfg, window_secs=1.0).ingredient is Ingredient.FLOODING


def test_flooding_below_both(cfg):
    window = [ev(i, i / 100, TcpSyn()) for i in range(100)]
    assert check_flooding(window, cfg, window_secs=1.0) is None


_offsets = st.lists(st.integers(0, 999), max_size=80)


@settings(max_examples=100, deadline=None)
@given(_offsets, _offsets)
def test_flooding_rate_monotone(base, extra):
    # noise path disabled: its ratio can fall when clean events are added
    c = replace(IngredientConfig.default(), flood_rate_threshold=40.0, flood_noise_ratio=1.0)
    window = [ev(i, t / 1000, TcpSyn()) for i, t in enumerate(sorted(base))]
    bigger = [ev(i, t / 1000, TcpSyn()) for i, t in enumerate(sorted(base + extra))]
    if check_flooding(window, c, window_secs=1.0):
        assert check_flooding(bigger, c, window_secs=1.0)


# -- retransmission -------------------------------------------------------------

def test_retx_acked_packet(cfg):
    assert check_retransmission([ev(0, 0.0, data("a"))], cfg) == []


def test_retx_just_in_time(cfg):
    eps = 1e-6
    flow = [ev(0, 0.0, data("a", acked=False)),
            ev(1, cfg.retx_timeout_secs - eps, data("a", retransmission_of=0))]
    assert check_retransmission(flow, cfg) == []


def test_retx_too_late(cfg):
    flow = [ev(0, 0.0, data("a", acked=False)),
            ev(1, cfg.retx_timeout_secs + 0.5, data("a", retransmission_of=0))]
    (f,) = check_retransmission(flow, cfg)
    assert f.ingredient is Ingredient.RETRANSMISSION_MISS and f.event_ids == (0,)


def test_retx_missing(cfg):
    (f,) = check_retransmission([ev(0, 0.0, data("a", acked=False))], cfg)
    assert f.event_ids == (0,)


def test_monitor_window_close_expires_overdue(cfg):
    mon = RuleMonitor(cfg)
    mon.observe(ev(0, 0.0, data("a", acked=False)))
    mon.close_window(2.0)
    assert mon.drain() == []
    mon.close_window(4.0)
    assert [f.ingredient for f in mon.drain()] == [Ingredient.RETRANSMISSION_MISS]


# -- radio range ----------------------------------------------------------------

def _at(n, pos, rng=None):
    return Endpoint(ep(n).mac, position=pos, radio_range=rng)


def test_radio_colocated(cfg):
    assert check_radio_range(ev(0, 0, TcpSyn(), src=_at(1, (3, 4)), dst=_at(2, (3, 4))), cfg) is None


def test_radio_declared_range(cfg):
    f = check_radio_range(ev(0, 0, data(), src=_at(1, (0, 0), 100.0), dst=_at(2, (300, 400))), cfg)
    assert f.ingredient is Ingredient.RADIO_RANGE and "wormhole" in f.detail


def test_radio_config_fallback(cfg):
    e = ev(0, 0, TcpSyn(), src=_at(1, (0, 0)), dst=_at(2, (0, 249)))
    assert check_radio_range(e, cfg) is None
    f = check_radio_range(replace(e, dst=_at(2, (0, 251))), cfg)
    assert f and f.detail.startswith("syn flood")


def test_radio_missing_positions(cfg):
    assert check_radio_range(ev(0, 0, TcpSyn(), src=_at(1, None, 1.0), dst=_at(2, (1e6, 0))), cfg) is None


# -- pattern replication --------------------------------------------------------

def _replicas(n, k_src=True):
    return [ev(i, i * 0.1, data("same"), src=ep(i % 200)) for i in range(n)]


def test_replication_distinct(cfg):
    assert check_pattern_replication([ev(i, i * 0.1, data(f"d{i}")) for i in range(100)], cfg) == []


def test_replication_exactly_k(cfg):
    (f,) = check_pattern_replication(_replicas(cfg.replication_k), cfg)
    assert f.ingredient is Ingredient.PATTERN_REPLICATION
    assert f.event_ids == tuple(range(cfg.replication_k))


def test_replication_k_minus_one(cfg):
    assert check_pattern_replication(_replicas(cfg.replication_k - 1), cfg) == []


def test_replication_outside_window(cfg):
    spread = [ev(i, i * 0.5, data("same")) for i in range(cfg.replication_k)]
    assert check_pattern_replication(spread, cfg) == []


def _flagged(events, c):
    return {i for f in check_pattern_replication(events, c) for i in f.event_ids}


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 200), max_size=40), st.lists(st.integers(0, 200), max_size=40))
def test_replication_monotone(base, extra):
    c = replace(IngredientConfig.default(), replication_k=5, replication_window_secs=2.0)
    # tag each event so the base ids can be followed into the larger window
    tagged = sorted([(t, 0, i) for i, t in enumerate(base)] + [(t, 1, i) for i, t in enumerate(extra)])
    small = [(t, i) for t, s, i in tagged if s == 0]
    events_small = [ev(i, t / 10, data("r")) for t, i in small]
    events_big = [ev(i if s == 0 else 1000 + i, t / 10, data("r")) for t, s, i in tagged]
    assert _flagged(events_small, c) <= _flagged(events_big, c)


# -- phases ---------------------------------------------------------------------

def test_phase_selection(cfg):
    c = replace(cfg, pre_selected=tuple(x for x in INGREDIENTS if x != "radio_range"))
    far = dict(src=_at(1, (0, 0)), dst=_at(2, (0, 1000)))
    inbound = EventTrace((ev(0, 1.0, data(), direction=Direction.INBOUND, **far),))
    outbound = EventTrace((ev(0, 1.0, data(), direction=Direction.OUTBOUND, **far),))
    assert evaluate_rules(inbound, c) == []
    assert [f.ingredient for f in evaluate_rules(outbound, c)] == [Ingredient.RADIO_RANGE]


def test_finding_dict_roundtrip(cfg):
    for f in evaluate_rules(fx.combined(), cfg):
        assert RuleFinding.from_dict(f.to_dict()) == f
