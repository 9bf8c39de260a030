"""Candidate generation and heuristic (deterministic) edges.

The full cross join between a new user and everyone registered earlier
is quadratic, so candidate pairs come from an inverted blocking index
over exact-match attributes instead: any prior user sharing at least
one blocking-key value with the new user is a candidate. Heuristic
edges are then emitted for candidates matching on a curated feature
list; they carry score 1.0 and act as the first line of defense.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .attributes import ABSENT, AttributeRecord, AttributeSchema, UserId

log = logging.getLogger(__name__)

HEURISTIC = "heuristic"
MODEL = "model"


class RetriableError(RuntimeError):
    """Transient failure; the event must be re-queued, never dropped."""


@dataclass(frozen=True, order=True)
class Edge:
    """Canonical undirected user-user association (lo < hi)."""

    lo: UserId
    hi: UserId
    kind: str
    score: float
    created_at: int
    source_feature: str

    def __post_init__(self):
        if self.lo == self.hi:
            raise ValueError(f"self-edge on user {self.lo}")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"edge score {self.score} outside [0, 1]")
        if self.lo > self.hi:
            raise ValueError(f"edge ({self.lo}, {self.hi}) not canonical")

    @classmethod
    def between(
        cls, a: UserId, b: UserId, kind: str, score: float, created_at: int, source_feature: str
    ) -> "Edge":
        lo, hi = (a, b) if a < b else (b, a)
        return cls(lo, hi, kind, score, created_at, source_feature)

    @property
    def pair(self) -> tuple[UserId, UserId]:
        return (self.lo, self.hi)


@dataclass
class CandidateSet:
    """Prior users sharing a blocking key with the new user.

    ``candidates`` maps each candidate to the set of blocking keys that
    produced it; a pair surfaced by several keys appears once.
    """

    new_user: UserId
    candidates: dict[UserId, set[str]] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return bool(self.candidates)

    def users(self) -> set[UserId]:
        return set(self.candidates)


class BlockingIndex:
    """Inverted index: blocking attribute -> value -> users carrying it.

    Single writer per shard, any number of readers. Inserts are
    idempotent so event replay leaves the index unchanged.
    """

    def __init__(self, schema: AttributeSchema):
        self._schema = schema
        self._index: dict[str, dict[object, set[UserId]]] = {
            name: {} for name in schema.blocking_attributes()
        }
        self._open = True

    def close(self) -> None:
        self._open = False

    def users_for(self, attribute: str, value) -> set[UserId]:
        return self._index[attribute].get(value, set())

    def insert(self, record: AttributeRecord) -> None:
        for name, bucket in self._index.items():
            value = record.attrs.get(name, ABSENT)
            if value is ABSENT:
                continue
            bucket.setdefault(value, set()).add(record.user_id)


def update_blocking_index(record: AttributeRecord, index: BlockingIndex) -> None:
    index.insert(record)


def generate_candidates(
    record: AttributeRecord,
    index: BlockingIndex,
    exclude: frozenset[UserId] | set[UserId] = frozenset(),
) -> CandidateSet:
    """All prior users sharing at least one blocking-key value.

    ``exclude`` removes users that must not be targeted (blocked
    accounts stay in the graph as evidence but draw no new edges).
    """
    if not index._open:
        raise RetriableError("blocking index unavailable")
    out = CandidateSet(new_user=record.user_id)
    for name in index._index:
        value = record.attrs.get(name, ABSENT)
        if value is ABSENT:
            continue
        for user in index.users_for(name, value):
            if user == record.user_id or user in exclude:
                continue
            out.candidates.setdefault(user, set()).add(name)
    return out


def heuristic_edges(
    record: AttributeRecord,
    candidates: CandidateSet,
    records: dict[UserId, AttributeRecord],
    schema: AttributeSchema,
) -> list[Edge]:
    """One heuristic edge per candidate matching a curated exact feature.

    A candidate matching several features yields a single edge tagged
    with the highest-priority feature; priority affects provenance only,
    never weight (all heuristic edges score 1.0). Absent never matches.
    """
    features = schema.heuristic_features()
    out = []
    for cand in sorted(candidates.candidates):
        other = records.get(cand)
        if other is None:
            log.warning("candidate %d has no stored record; skipped", cand)
            continue
        for name in features:
            mine = record.attrs.get(name, ABSENT)
            theirs = other.attrs.get(name, ABSENT)
            if mine is ABSENT or theirs is ABSENT:
                continue
            if mine == theirs:
                out.append(
                    Edge.between(
                        record.user_id,
                        cand,
                        HEURISTIC,
                        1.0,
                        record.registered_at,
                        name,
                    )
                )
                break
    return out
