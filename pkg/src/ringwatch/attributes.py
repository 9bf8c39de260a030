"""Registration-attribute domain model and normalization.

Raw registration payloads carry multi-valued, messy attribute lists.
This module collapses them into one comparable value per schema
attribute: multi-valued attributes pick the latest entry, sensitive
values are replaced by a keyed digest, and anything missing becomes an
explicit absent marker (never an empty string) so downstream comparators
can tell "both missing" from "both empty".
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Union

from .comparators import COMPARATOR_IDS

MAX_USER_ID = 2**64 - 1

UserId = int


class ValidationError(ValueError):
    """Event rejected before normalization (bad user id, unknown attribute)."""


class NormalizationError(ValueError):
    """A declared attribute holds a value the schema's class cannot parse."""

    def __init__(self, attribute: str, reason: str):
        self.attribute = attribute
        super().__init__(f"attribute {attribute!r}: {reason}")


class _Absent:
    __slots__ = ()

    def __repr__(self) -> str:
        return "ABSENT"

    def __bool__(self) -> bool:
        return False


#: Marker for a schema attribute the event did not carry.
ABSENT = _Absent()

NormalizedValue = Union[str, float, frozenset, _Absent]

_DIGEST_RE = re.compile(r"^[0-9a-f]{64}$")
_TOKEN_SPLIT_RE = re.compile(r"[^0-9a-z]+")

VALUE_CLASSES = ("string", "numeric", "tokens")
RULES = ("latest", "hash", "lowercase_trim", "tokenize")


@dataclass(frozen=True)
class AttributeSpec:
    """Declaration of one schema attribute.

    ``rule`` controls the value transform applied after multi-value
    collapse; ``blocking`` attributes feed candidate generation;
    ``heuristic_priority`` (lower = higher priority) marks the attribute
    as a deterministic-edge feature.
    """

    name: str
    value_class: str = "string"
    rule: str = "latest"
    blocking: bool = False
    comparator: str = "exact"
    comparator_scale: float = 1.0
    heuristic_priority: int | None = None
    multi_valued: bool = True


@dataclass(frozen=True)
class AttributeSchema:
    attributes: tuple[AttributeSpec, ...]
    hash_key: bytes = b"ringwatch-default-key"
    reject_unknown: bool = False

    def __post_init__(self):
        object.__setattr__(self, "_by_name", {a.name: a for a in self.attributes})

    def spec(self, name: str) -> AttributeSpec:
        return self._by_name[name]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    @property
    def version(self) -> str:
        """Deterministic fingerprint of the attribute declarations."""
        payload = json.dumps(
            [
                [a.name, a.value_class, a.rule, a.comparator, a.comparator_scale]
                for a in self.attributes
            ],
            separators=(",", ":"),
        )
        return hashlib.blake2b(payload.encode(), digest_size=6).hexdigest()

    def heuristic_features(self) -> list[str]:
        """Heuristic-edge attribute names, highest priority first."""
        ranked = [a for a in self.attributes if a.heuristic_priority is not None]
        ranked.sort(key=lambda a: (a.heuristic_priority, a.name))
        return [a.name for a in ranked]

    def blocking_attributes(self) -> list[str]:
        return [a.name for a in self.attributes if a.blocking]


@dataclass(frozen=True)
class RawRegistrationEvent:
    """One registration payload as it arrives on the ingest stream.

    ``attributes`` maps attribute name to a list of entries; an entry is
    either a bare string or a ``[value, epoch_ms]`` pair for sources
    that timestamp their observations.
    """

    user_id: UserId
    registered_at: int
    attributes: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, line: str) -> "RawRegistrationEvent":
        obj = json.loads(line)
        return cls(
            user_id=obj.get("user_id"),
            registered_at=obj.get("registered_at"),
            attributes=obj.get("attributes", {}),
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "user_id": self.user_id,
                "registered_at": self.registered_at,
                "attributes": self.attributes,
            },
            sort_keys=True,
            separators=(",", ":"),
        )


@dataclass(frozen=True)
class AttributeRecord:
    """Normalized per-user attributes; one entry per schema attribute."""

    user_id: UserId
    registered_at: int
    attrs: dict
    schema_version: str

    def to_json(self) -> str:
        encoded = {}
        for name, value in self.attrs.items():
            if value is ABSENT:
                encoded[name] = None
            elif isinstance(value, frozenset):
                encoded[name] = sorted(value)
            else:
                encoded[name] = value
        return json.dumps(
            {
                "user_id": self.user_id,
                "registered_at": self.registered_at,
                "attrs": encoded,
                "schema_version": self.schema_version,
            },
            sort_keys=True,
            separators=(",", ":"),
        )


def _entry_value_ts(entry, attribute: str) -> tuple[str, int]:
    if isinstance(entry, str):
        return entry, 0
    if isinstance(entry, (list, tuple)) and len(entry) == 2:
        value, ts = entry
        if not isinstance(value, str) or not isinstance(ts, (int, float)):
            raise NormalizationError(attribute, f"malformed entry {entry!r}")
        return value, int(ts)
    raise NormalizationError(attribute, f"malformed entry {entry!r}")


def _collapse_latest(entries: list, attribute: str) -> str:
    # Max timestamp wins; ties break on the value itself so the pick is
    # independent of list order.
    best: tuple[int, str] | None = None
    for entry in entries:
        value, ts = _entry_value_ts(entry, attribute)
        key = (ts, value)
        if best is None or key > best:
            best = key
    assert best is not None
    return best[1]


def _hash_value(value: str, key: bytes) -> str:
    if _DIGEST_RE.match(value):
        # Already a digest: hashing is a fixed point, never double-applied.
        return value
    return hashlib.blake2b(value.encode("utf-8"), key=key, digest_size=32).hexdigest()


def _tokenize(value: str) -> frozenset:
    return frozenset(t for t in _TOKEN_SPLIT_RE.split(value.lower()) if t)


def normalize(event: RawRegistrationEvent, schema: AttributeSchema) -> AttributeRecord:
    """Collapse and clean a raw event into a comparable AttributeRecord.

    Deterministic: the same event and schema always yield a
    byte-identical record. Every schema attribute is present in the
    output, as ABSENT when the event did not carry it.
    """
    if not isinstance(event.user_id, int) or not (1 <= event.user_id <= MAX_USER_ID):
        raise ValidationError(f"missing or invalid user_id: {event.user_id!r}")
    if not isinstance(event.registered_at, int):
        raise ValidationError(f"invalid registered_at: {event.registered_at!r}")
    if schema.reject_unknown:
        unknown = set(event.attributes) - set(schema.names)
        if unknown:
            raise ValidationError(f"unknown attributes: {sorted(unknown)}")

    attrs: dict[str, NormalizedValue] = {}
    for spec in schema.attributes:
        entries = event.attributes.get(spec.name)
        if not entries:
            attrs[spec.name] = ABSENT
            continue
        if not spec.multi_valued and len(entries) > 1:
            raise NormalizationError(spec.name, "multiple values for single-valued attribute")
        raw = _collapse_latest(entries, spec.name)
        if spec.value_class == "numeric":
            try:
                attrs[spec.name] = float(raw)
            except ValueError:
                raise NormalizationError(spec.name, f"not numeric: {raw!r}") from None
        elif spec.rule == "hash":
            attrs[spec.name] = _hash_value(raw, schema.hash_key)
        elif spec.rule == "lowercase_trim":
            attrs[spec.name] = raw.strip().lower()
        elif spec.rule == "tokenize":
            attrs[spec.name] = _tokenize(raw)
        else:  # latest: collapse only, keep the exact token
            attrs[spec.name] = raw
    return AttributeRecord(
        user_id=event.user_id,
        registered_at=event.registered_at,
        attrs=attrs,
        schema_version=schema.version,
    )


def validate_schema(schema: AttributeSchema) -> list[str]:
    """Return all violations; an empty list means the schema is usable."""
    violations = []
    seen: set[str] = set()
    for spec in schema.attributes:
        if spec.name in seen:
            violations.append(f"duplicate attribute name {spec.name!r}")
        seen.add(spec.name)
        if spec.comparator not in COMPARATOR_IDS:
            violations.append(
                f"attribute {spec.name!r} references undefined comparator {spec.comparator!r}"
            )
        if spec.value_class not in VALUE_CLASSES:
            violations.append(f"attribute {spec.name!r} has unknown value class {spec.value_class!r}")
        if spec.rule not in RULES:
            violations.append(f"attribute {spec.name!r} has unknown rule {spec.rule!r}")
    if not any(a.blocking for a in schema.attributes):
        violations.append("no blocking attribute")
    return violations


def default_schema(hash_key: bytes = b"ringwatch-default-key") -> AttributeSchema:
    """Desk-scale 8-attribute schema exercising every comparator class."""
    return AttributeSchema(
        attributes=(
            AttributeSpec("device_id", rule="lowercase_trim", blocking=True, heuristic_priority=1),
            AttributeSpec("ip", rule="latest", blocking=True, heuristic_priority=2),
            AttributeSpec("bank_hash", rule="hash", blocking=True, heuristic_priority=3),
            AttributeSpec("dob_hash", rule="hash"),
            AttributeSpec("referral_code", rule="lowercase_trim", blocking=True),
            AttributeSpec("name_token_set", value_class="tokens", rule="tokenize", comparator="jaccard"),
            AttributeSpec("user_agent", rule="lowercase_trim", comparator="levenshtein"),
            AttributeSpec("geo_cell", value_class="numeric", comparator="numeric", comparator_scale=50.0),
        ),
        hash_key=hash_key,
    )


def schema_from_dict(doc: dict) -> AttributeSchema:
    """Build a schema from a parsed JSON/TOML config document."""
    attrs = []
    for item in doc.get("attributes", []):
        attrs.append(
            AttributeSpec(
                name=item["name"],
                value_class=item.get("value_class", "string"),
                rule=item.get("rule", "latest"),
                blocking=item.get("blocking", False),
                comparator=item.get("comparator", "exact"),
                comparator_scale=item.get("comparator_scale", 1.0),
                heuristic_priority=item.get("heuristic_priority"),
                multi_valued=item.get("multi_valued", True),
            )
        )
    key = doc.get("hash_key", "ringwatch-default-key")
    return AttributeSchema(
        attributes=tuple(attrs),
        hash_key=key.encode() if isinstance(key, str) else key,
        reject_unknown=doc.get("reject_unknown", False),
    )
