"""Pairwise attribute comparators.

Every comparator maps a pair of normalized values to a similarity in
[0, 1]. A missing value on either side is non-evidence and always
scores 0.0; that rule lives in the feature builder, not here.
"""

from __future__ import annotations

import math

# Levenshtein cost is quadratic; inputs longer than this are truncated.
MAX_COMPARED_CHARS = 64


def exact(a: str, b: str) -> float:
    return 1.0 if a == b else 0.0


def jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 0.0
    union = len(a | b)
    return len(a & b) / union


def levenshtein_distance(a: str, b: str) -> int:
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def levenshtein_similarity(a: str, b: str) -> float:
    """1 - edit_distance / max_length, on inputs clipped to a fixed bound."""
    a = a[:MAX_COMPARED_CHARS]
    b = b[:MAX_COMPARED_CHARS]
    if not a and not b:
        return 0.0
    return 1.0 - levenshtein_distance(a, b) / max(len(a), len(b))


def numeric_similarity(a: float, b: float, scale: float = 1.0) -> float:
    """Absolute difference mapped through exp(-|delta| / scale)."""
    return math.exp(-abs(a - b) / scale)


# Comparator ids referenced by attribute schemas. Scale-parameterized
# comparators are closed over their scale at schema-compile time.
COMPARATOR_IDS = frozenset({"exact", "jaccard", "levenshtein", "numeric"})
