"""Pairwise comparison features for edge classification.

Each schema attribute contributes one feature: the output of its
comparator applied to the two users' normalized values. Features are
symmetric in the record pair and live in [0, 1]; a value missing on
either side encodes as 0 (absence is non-evidence).
"""

from __future__ import annotations

from dataclasses import dataclass

from . import comparators
from .attributes import ABSENT, AttributeRecord, AttributeSchema


class SchemaMismatchError(ValueError):
    def __init__(self, left: str, right: str):
        super().__init__(f"schema version mismatch: {left} vs {right}")
        self.versions = (left, right)


@dataclass(frozen=True)
class EdgeFeatureVector:
    """Fixed-order feature vector for one user pair."""

    edge_id: str
    features: tuple[float, ...]
    schema_version: str


def _compare(spec, a, b) -> float:
    if a is ABSENT or b is ABSENT:
        return 0.0
    if spec.comparator == "exact":
        return comparators.exact(a, b)
    if spec.comparator == "jaccard":
        return comparators.jaccard(a, b)
    if spec.comparator == "levenshtein":
        return comparators.levenshtein_similarity(a, b)
    if spec.comparator == "numeric":
        return comparators.numeric_similarity(a, b, spec.comparator_scale)
    raise ValueError(f"unknown comparator {spec.comparator!r}")


def build_features(
    a: AttributeRecord, b: AttributeRecord, schema: AttributeSchema
) -> EdgeFeatureVector:
    """Compare two records attribute-by-attribute in schema order.

    The edge id concatenates the two user ids in argument order; the
    feature values themselves are order-independent.
    """
    if a.user_id == b.user_id:
        raise ValueError(f"cannot build features for user {a.user_id} against itself")
    if a.schema_version != schema.version:
        raise SchemaMismatchError(a.schema_version, schema.version)
    if b.schema_version != schema.version:
        raise SchemaMismatchError(b.schema_version, schema.version)
    values = tuple(
        _compare(spec, a.attrs.get(spec.name, ABSENT), b.attrs.get(spec.name, ABSENT))
        for spec in schema.attributes
    )
    return EdgeFeatureVector(
        edge_id=f"{a.user_id}-{b.user_id}",
        features=values,
        schema_version=schema.version,
    )
