import copy

import pytest
from hypothesis import given, settings, strategies as st

from conftest import ev
from dhcp_sentinel.signatures import (
    SEEDED_SIGNATURES, DuplicateSignatureId, Matcher, MatchOp, Signature, SignatureDb,
    SignatureError, SignatureSyntaxError, load_signatures, loads_signatures, match_event,
)
from dhcp_sentinel.trace import AttackClass, ConnectionRecord, LogEntry, Severity

TELNET = ev(0, 1.0, LogEntry("telnet", "login attempt", {"user": "root"}))
AUDIT = ev(1, 1.0, LogEntry("security", "audit", {}, status_code=645))
FREEPICS = ev(2, 1.0, LogEntry("smtp", "mail in", {"attachment": "freepics.exe"}))


@pytest.mark.parametrize("event,sig_id", [
    (TELNET, "SIG-TELNET-ROOT"), (AUDIT, "SIG-AUDIT-645"), (FREEPICS, "SIG-FREEPICS"),
])
def test_seeded_fixture_hits_once(event, sig_id):
    hits = match_event(event, SignatureDb())
    assert [h.signature_id for h in hits] == [sig_id]
    assert hits[0].event_id == event.id


def test_benign_connection_no_hit():
    assert match_event(ev(0, 1.0, ConnectionRecord(30.0, "ssh")), SignatureDb()) == []


def test_matched_fields_cover_predicate():
    (hit,) = match_event(TELNET, SignatureDb())
    assert hit.matched_fields == (("kind.log.facility", "telnet"), ("kind.log.attributes.user", "root"))


def test_keys_case_insensitive():
    e = ev(0, 1.0, LogEntry("telnet", "", {"User": "root"}))
    assert [h.signature_id for h in match_event(e, SignatureDb())] == ["SIG-TELNET-ROOT"]


def test_values_case_sensitive():
    e = ev(0, 1.0, LogEntry("telnet", "", {"user": "Root"}))
    assert match_event(e, SignatureDb()) == []
    e = ev(0, 1.0, LogEntry("smtp", "", {"attachment": "FreePics.exe"}))
    assert match_event(e, SignatureDb()) == []


def test_int_eq_rejects_text():
    with pytest.raises(SignatureError):
        Matcher("kind.log.status_code", MatchOp.INT_EQ, "645")


def test_contains():
    sig = Signature("S", "", AttackClass.PROBE, Severity.LOW,
                    (Matcher("kind.log.text", MatchOp.CONTAINS, "scan"),))
    db = SignatureDb((sig,))
    assert match_event(ev(0, 1.0, LogEntry("ids", "port scan seen")), db)
    assert not match_event(ev(0, 1.0, LogEntry("ids", "port SCAN seen")), db)


def test_all_matches_reported_in_db_order():
    extra = Signature("SIG-ANY-TELNET", "", AttackClass.R2L, Severity.LOW,
                      (Matcher("kind.log.facility", MatchOp.EQ, "telnet"),))
    db = SignatureDb((extra,) + SEEDED_SIGNATURES)
    assert [h.signature_id for h in match_event(TELNET, db)] == ["SIG-ANY-TELNET", "SIG-TELNET-ROOT"]


def test_matching_does_not_mutate_event():
    before = copy.deepcopy(TELNET)
    match_event(TELNET, SignatureDb())
    assert TELNET == before


def test_empty_predicate_rejected():
    with pytest.raises(SignatureError):
        Signature("S", "", AttackClass.PROBE, Severity.LOW, ())


# -- loading --------------------------------------------------------------------

CUSTOM = """
replace_defaults = true

[[signature]]
id = "SIG-FTP-ANON"
class = "r2l"
severity = "low"
match = [{path = "kind.log.facility", op = "eq", value = "ftp"},
         {path = "kind.log.attributes.user", op = "eq", value = "anonymous"}]

[[signature]]
id = "SIG-SHADOW"
class = "u2r"
match = [{path = "kind.log.text", op = "contains", value = "/etc/shadow"}]
"""


def test_empty_file_gives_defaults():
    assert load_signatures("").ids == ["SIG-TELNET-ROOT", "SIG-AUDIT-645", "SIG-FREEPICS"]
    assert load_signatures().ids == load_signatures("").ids


def test_replace_defaults():
    db = loads_signatures(CUSTOM)
    assert db.ids == ["SIG-FTP-ANON", "SIG-SHADOW"]


def test_additional_signatures_appended():
    db = loads_signatures(CUSTOM.replace("replace_defaults = true", ""))
    assert len(db) == 5


def test_redefining_seed_is_duplicate():
    text = '[[signature]]\nid = "SIG-TELNET-ROOT"\nclass = "r2l"\nmatch = [{path = "a", op = "eq", value = "b"}]\n'
    with pytest.raises(DuplicateSignatureId):
        loads_signatures(text)


def test_syntax_error_line():
    with pytest.raises(SignatureSyntaxError) as exc:
        loads_signatures('version = 1\n[[signature]\nid = "x"\n')
    assert exc.value.line == 2


def test_binary_source():
    import io
    assert load_signatures(io.BytesIO(CUSTOM.encode())).ids == ["SIG-FTP-ANON", "SIG-SHADOW"]


_facilities = st.sampled_from(["telnet", "ftp", "smtp", "sshd"])
_users = st.sampled_from(["root", "anonymous", "alice"])


def _sig(i, facility):
    return Signature(f"S{i}", "", AttackClass.R2L, Severity.LOW,
                     (Matcher("kind.log.facility", MatchOp.EQ, facility),))


@settings(max_examples=100, deadline=None)
@given(st.lists(_facilities, max_size=6), st.lists(_facilities, max_size=6), _facilities, _users)
def test_disjoint_union_matches_union(fa, fb, facility, user):
    a = SignatureDb(tuple(_sig(i, f) for i, f in enumerate(fa)))
    b = SignatureDb(tuple(_sig(100 + i, f) for i, f in enumerate(fb)))
    both = SignatureDb(a.signatures + b.signatures)
    e = ev(0, 1.0, LogEntry(facility, "", {"user": user}))
    assert match_event(e, both) == match_event(e, a) + match_event(e, b)
