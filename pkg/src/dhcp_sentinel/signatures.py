"""Middle detection layer: known-attack signatures matched by string comparison."""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import BinaryIO, List, Optional, Tuple, Union

from ._compat import tomllib
from .trace import AttackClass, NetworkEvent, Severity


class SignatureError(ValueError):
    pass


class SignatureSyntaxError(SignatureError):
    def __init__(self, line: Optional[int], msg: str):
        super().__init__(f"line {line}: {msg}" if line else msg)
        self.line = line


class DuplicateSignatureId(SignatureError):
    def __init__(self, sig_id: str):
        super().__init__(f"duplicate signature id {sig_id!r}")
        self.sig_id = sig_id


class MatchOp(str, enum.Enum):
    EQ = "eq"
    CONTAINS = "contains"
    INT_EQ = "int_eq"


@dataclass(frozen=True)
class Matcher:
    path: str
    op: MatchOp
    value: Union[str, int]

    def __post_init__(self):
        object.__setattr__(self, "op", MatchOp(self.op))
        if self.op is MatchOp.INT_EQ:
            if isinstance(self.value, bool) or not isinstance(self.value, int):
                raise SignatureError(f"int_eq on {self.path} needs an integer value")
        elif not isinstance(self.value, str):
            raise SignatureError(f"{self.op.value} on {self.path} needs a text value")

    def test(self, view: dict):
        """Return the matched field value, or None when the matcher fails."""
        found, got = resolve(view, self.path)
        if not found:
            return None
        if self.op is MatchOp.INT_EQ:
            ok = isinstance(got, int) and not isinstance(got, bool) and got == self.value
        elif self.op is MatchOp.EQ:
            ok = isinstance(got, str) and got == self.value
        else:
            ok = isinstance(got, str) and self.value in got
        return got if ok else None


def resolve(view, path: str):
    """Walk a dotted path; keys compare case-insensitively, values are untouched."""
    node = view
    for part in path.split("."):
        if not isinstance(node, dict):
            return False, None
        if part in node:
            node = node[part]
            continue
        folded = part.casefold()
        for key in sorted(node):
            if key.casefold() == folded:
                node = node[key]
                break
        else:
            return False, None
    return True, node


@dataclass(frozen=True)
class Signature:
    id: str
    description: str
    attack_class: AttackClass
    severity: Severity
    predicate: Tuple[Matcher, ...]

    def __post_init__(self):
        object.__setattr__(self, "predicate", tuple(self.predicate))
        if not self.predicate:
            raise SignatureError(f"signature {self.id!r} has an empty predicate")

    def to_dict(self) -> dict:
        return {"id": self.id, "description": self.description, "class": self.attack_class.value,
                "severity": self.severity.value,
                "match": [{"path": m.path, "op": m.op.value, "value": m.value} for m in self.predicate]}


@dataclass(frozen=True)
class SignatureHit:
    signature_id: str
    event_id: int
    matched_fields: Tuple[Tuple[str, object], ...]


SEEDED_SIGNATURES = (
    Signature(
        "SIG-TELNET-ROOT", "telnet login attempt as root violates site policy",
        AttackClass.R2L, Severity.HIGH,
        (Matcher("kind.log.facility", MatchOp.EQ, "telnet"),
         Matcher("kind.log.attributes.user", MatchOp.EQ, "root")),
    ),
    Signature(
        "SIG-AUDIT-645", "status 645: host auditing disabled",
        AttackClass.U2R, Severity.MEDIUM,
        (Matcher("kind.log.status_code", MatchOp.INT_EQ, 645),),
    ),
    Signature(
        "SIG-FREEPICS", "attachment freepics.exe is known malware",
        AttackClass.R2L, Severity.HIGH,
        (Matcher("kind.log.attributes.attachment", MatchOp.EQ, "freepics.exe"),),
    ),
)


@dataclass(frozen=True)
class SignatureDb:
    signatures: Tuple[Signature, ...] = SEEDED_SIGNATURES
    version: int = 0

    def __post_init__(self):
        object.__setattr__(self, "signatures", tuple(self.signatures))
        seen = set()
        for sig in self.signatures:
            if sig.id in seen:
                raise DuplicateSignatureId(sig.id)
            seen.add(sig.id)

    @property
    def ids(self) -> List[str]:
        return [s.id for s in self.signatures]

    def __len__(self) -> int:
        return len(self.signatures)

    def with_version(self, version: int) -> "SignatureDb":
        return replace(self, version=version)


def match_event(event: NetworkEvent, db: SignatureDb) -> List[SignatureHit]:
    """Every signature whose whole predicate holds, in database order."""
    view = event.view()
    hits = []
    for sig in db.signatures:
        matched = []
        for m in sig.predicate:
            got = m.test(view)
            if got is None:
                break
            matched.append((m.path, got))
        else:
            hits.append(SignatureHit(sig.id, event.id, tuple(matched)))
    return hits


def _toml_line(exc: Exception) -> Optional[int]:
    lineno = getattr(exc, "lineno", None)
    if lineno:
        return lineno
    msg = str(exc)
    marker = "line "
    if marker in msg:
        digits = msg.split(marker, 1)[1].split(",")[0].split(")")[0].strip()
        if digits.isdigit():
            return int(digits)
    return None


def _signature_from_dict(d: dict) -> Signature:
    try:
        return Signature(
            id=str(d["id"]),
            description=str(d.get("description", "")),
            attack_class=AttackClass(d["class"]),
            severity=Severity(d.get("severity", "medium")),
            predicate=tuple(Matcher(m["path"], MatchOp(m["op"]), m["value"]) for m in d["match"]),
        )
    except KeyError as exc:
        raise SignatureError(f"signature {d.get('id', '?')!r} missing key {exc}") from None
    except ValueError as exc:
        if isinstance(exc, SignatureError):
            raise
        raise SignatureError(f"signature {d.get('id', '?')!r}: {exc}") from None


def loads_signatures(text: str) -> SignatureDb:
    """Parse a TOML signature file.

    Layout::

        replace_defaults = false   # optional
        version = 1                # optional

        [[signature]]
        id = "SIG-X"
        class = "r2l"
        severity = "high"
        match = [{path = "kind.log.facility", op = "eq", value = "ftp"}]
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise SignatureSyntaxError(_toml_line(exc), str(exc)) from None
    custom = [_signature_from_dict(d) for d in doc.get("signature", [])]
    base = [] if doc.get("replace_defaults", False) else list(SEEDED_SIGNATURES)
    return SignatureDb(tuple(base + custom), int(doc.get("version", 0)))


def load_signatures(source: Union[BinaryIO, str, None] = None) -> SignatureDb:
    if source is None:
        return SignatureDb()
    if isinstance(source, str):
        return loads_signatures(source)
    data = source.read()
    return loads_signatures(data.decode("utf-8") if isinstance(data, bytes) else data)
