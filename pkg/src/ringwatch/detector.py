"""Real-time cluster assignment backed by a user->cluster cache.

A full batch run labels every registered user once (bootstrap); after
that each registration touches only the new user's 1-degree
neighborhood and one cache entry per neighbor. A user whose edges span
several cached clusters joins the largest one and leaves a merge
ticket; a background reconciliation recomputes components over a graph
snapshot and restores exact cache/graph agreement. Correctness comes
from reconciliation's full recomputation; tickets are advisory.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .attributes import UserId
from .ccengine import components_arrays, labels_to_components
from .edges import HEURISTIC, Edge
from .graphstore import EdgeSnapshot, Graph

log = logging.getLogger(__name__)

ClusterId = int


class StaleSnapshotError(RuntimeError):
    """Snapshot predates the cache's high-water mark; retry with a fresh one."""


@dataclass
class ScoreParams:
    """Cluster-score shape: banded size base plus density and heuristic
    bonuses, minus a discount for small device-only (family) clusters.
    """

    size_bands: tuple = ((21, 0.95), (6, 0.85), (3, 0.70), (2, 0.50), (1, 0.0))
    density_weight: float = 0.10
    heuristic_weight: float = 0.10
    family_discount: float = 0.20
    family_max_members: int = 3
    family_feature: str = "device_id"

    def size_base(self, members: int) -> float:
        for floor, base in self.size_bands:
            if members >= floor:
                return base
        return 0.0


@dataclass(frozen=True)
class ClusterScore:
    value: float
    size_base: float
    edge_density: float
    heuristic_fraction: float
    family_discount: float

    def terms(self) -> dict:
        return {
            "value": self.value,
            "size_base": self.size_base,
            "edge_density": self.edge_density,
            "heuristic_fraction": self.heuristic_fraction,
            "family_discount": self.family_discount,
        }


@dataclass
class ClusterStats:
    """Aggregates for one cached cluster."""

    cluster: ClusterId
    members: set
    heuristic_edges: int = 0
    model_edges: int = 0
    device_edges: int = 0
    score: ClusterScore | None = None
    last_scored_at: int = 0

    @property
    def internal_edges(self) -> int:
        return self.heuristic_edges + self.model_edges

    @property
    def member_count(self) -> int:
        return len(self.members)

    @property
    def device_only(self) -> bool:
        return self.internal_edges > 0 and self.device_edges == self.internal_edges


@dataclass(frozen=True)
class ClusterAssignment:
    user: UserId
    cluster: ClusterId
    member_count: int
    score: ClusterScore


@dataclass
class MergeTicket:
    clusters: frozenset
    triggering_user: UserId
    created_at: int
    status: str = "pending"  # pending | reconciled

    def __post_init__(self):
        if len(self.clusters) < 2:
            raise ValueError("merge ticket needs at least two distinct clusters")


@dataclass
class MergeReport:
    merges: list = field(default_factory=list)  # (survivor, sorted absorbed ids)
    reassigned_users: int = 0
    tickets_consumed: int = 0

    def __bool__(self) -> bool:
        return bool(self.merges or self.reassigned_users or self.tickets_consumed)


def score_cluster(
    member_count: int,
    internal_edges: int,
    heuristic_edges: int,
    device_only: bool,
    params: ScoreParams | None = None,
) -> ClusterScore:
    """Deterministic score in [0, 1] from cluster aggregates."""
    params = params or ScoreParams()
    if member_count < 1:
        raise ValueError("cluster must have at least one member")
    base = params.size_base(member_count)
    possible = member_count * (member_count - 1) // 2
    density = internal_edges / possible if possible else 0.0
    heuristic_fraction = heuristic_edges / internal_edges if internal_edges else 0.0
    discount = 1.0 if (member_count <= params.family_max_members and device_only) else 0.0
    raw = (
        base
        + params.density_weight * density
        + params.heuristic_weight * heuristic_fraction
        - params.family_discount * discount
    )
    # The banded arithmetic is decimal; strip float dust so boundary
    # cases (e.g. 0.5 + 0.1 + 0.1 - 0.2) land exactly on the band edge.
    return ClusterScore(
        value=round(min(1.0, max(0.0, raw)), 12),
        size_base=base,
        edge_density=density,
        heuristic_fraction=heuristic_fraction,
        family_discount=discount,
    )


class ClusterCache:
    """In-process user->cluster map with per-cluster aggregates.

    Single writer per event; readers are never blocked. ``counters``
    tracks cache touches so lookup-complexity claims can be asserted
    without a stopwatch.
    """

    def __init__(self, params: ScoreParams | None = None):
        self.params = params or ScoreParams()
        self.assignments: dict[UserId, ClusterId] = {}
        self.clusters: dict[ClusterId, ClusterStats] = {}
        self.pending_tickets: list[MergeTicket] = []
        self.inconsistency_flags = 0
        self.high_water_seq = 0
        self.counters = {"cache_reads": 0, "cache_writes": 0, "neighbor_lookups": 0}

    def __len__(self) -> int:
        return len(self.assignments)

    def cluster_of(self, user: UserId) -> ClusterId | None:
        self.counters["cache_reads"] += 1
        return self.assignments.get(user)

    def stats(self, cluster: ClusterId) -> ClusterStats:
        return self.clusters[cluster]

    def assignment_view(self, user: UserId) -> ClusterAssignment | None:
        cluster = self.assignments.get(user)
        if cluster is None:
            return None
        stats = self.clusters[cluster]
        return ClusterAssignment(
            user=user, cluster=cluster, member_count=stats.member_count, score=stats.score
        )

    def _rescore(self, stats: ClusterStats, at: int) -> None:
        stats.score = score_cluster(
            stats.member_count,
            stats.internal_edges,
            stats.heuristic_edges,
            stats.device_only,
            self.params,
        )
        stats.last_scored_at = at

    # -- sidecar persistence ------------------------------------------------

    def save_sidecar(self, path) -> None:
        """Persist the mapping keyed by the graph sequence it reflects."""
        import json

        doc = {
            "high_water_seq": self.high_water_seq,
            "assignments": {str(u): c for u, c in self.assignments.items()},
            "clusters": {
                str(c): {
                    "members": sorted(s.members),
                    "heuristic_edges": s.heuristic_edges,
                    "model_edges": s.model_edges,
                    "device_edges": s.device_edges,
                    "last_scored_at": s.last_scored_at,
                }
                for c, s in self.clusters.items()
            },
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, separators=(",", ":"))

    @classmethod
    def load_sidecar(cls, path, expected_seq: int | None = None,
                     params: ScoreParams | None = None) -> "ClusterCache":
        """Rehydrate a cache; rejects a sidecar older than ``expected_seq``."""
        import json

        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if expected_seq is not None and doc["high_water_seq"] < expected_seq:
            raise StaleSnapshotError(
                f"sidecar seq {doc['high_water_seq']} older than graph seq {expected_seq}"
            )
        cache = cls(params=params)
        cache.high_water_seq = doc["high_water_seq"]
        cache.assignments = {int(u): int(c) for u, c in doc["assignments"].items()}
        for c, s in doc["clusters"].items():
            stats = ClusterStats(
                cluster=int(c),
                members=set(s["members"]),
                heuristic_edges=s["heuristic_edges"],
                model_edges=s["model_edges"],
                device_edges=s["device_edges"],
            )
            cache._rescore(stats, s["last_scored_at"])
            cache.clusters[int(c)] = stats
        return cache


def _edge_counts(edges: list[Edge], family_feature: str) -> tuple[int, int, int]:
    heur = sum(1 for e in edges if e.kind == HEURISTIC)
    dev = sum(1 for e in edges if e.kind == HEURISTIC and e.source_feature == family_feature)
    return heur, len(edges) - heur, dev


def bootstrap(labels: dict[UserId, ClusterId], graph: Graph, at: int = 0) -> ClusterCache:
    """Build the cache from a full batch labeling plus the graph snapshot
    the labeling was computed on. Idempotent for fixed inputs.
    """
    cache = ClusterCache()
    for user in labels:
        if not graph.has_vertex(user):
            raise ValueError(f"label for unknown user {user}")
    missing = [u for u in graph.vertices() if u not in labels]
    if missing:
        raise ValueError(f"labels do not cover all vertices; missing {missing[:5]}")
    comps = labels_to_components(labels)
    for rep, members in comps.items():
        stats = ClusterStats(cluster=rep, members=set(members))
        cache.clusters[rep] = stats
        for m in members:
            cache.assignments[m] = rep
    for user in labels:
        for lo, hi, kind, _score, src in graph.incident_edges(user):
            if lo != user:  # count each edge once, from its low endpoint
                continue
            stats = cache.clusters[cache.assignments[user]]
            if kind == HEURISTIC:
                stats.heuristic_edges += 1
                if src == cache.params.family_feature:
                    stats.device_edges += 1
            else:
                stats.model_edges += 1
    for stats in cache.clusters.values():
        cache._rescore(stats, at)
    cache.high_water_seq = graph.seq
    return cache


def assign_on_registration(
    new_user: UserId,
    edges: list[Edge],
    cache: ClusterCache,
    graph: Graph,
    at: int,
) -> tuple[ClusterAssignment, MergeTicket | None]:
    """Assign the new user using only its 1-degree neighborhood.

    Zero neighbor clusters: a fresh singleton. One: join it. Two or
    more: join the one with the most members (ties to the lower id) and
    leave a merge ticket for reconciliation. A neighbor missing from the
    cache contributes a singleton stand-in and flags the cache dirty;
    ingest never blocks on consistency.
    """
    neighbor_clusters: dict[ClusterId, ClusterStats] = {}
    for e in edges:
        other = e.hi if e.lo == new_user else e.lo
        cache.counters["neighbor_lookups"] += 1
        cluster = cache.cluster_of(other)
        if cluster is None:
            stats = cache.clusters.get(other)
            if stats is None:
                stats = ClusterStats(cluster=other, members={other})
                cache.clusters[other] = stats
                cache.assignments[other] = other
                cache.counters["cache_writes"] += 1
            cache.inconsistency_flags += 1
            log.warning("cache miss for neighbor %d; singleton fallback", other)
            cluster = other
        neighbor_clusters[cluster] = cache.clusters[cluster]

    ticket = None
    if not neighbor_clusters:
        target = ClusterStats(cluster=new_user, members={new_user})
        cache.clusters[new_user] = target
    else:
        chosen = max(neighbor_clusters.values(), key=lambda s: (s.member_count, -s.cluster))
        target = chosen
        target.members.add(new_user)
        if len(neighbor_clusters) > 1:
            ticket = MergeTicket(
                clusters=frozenset(neighbor_clusters),
                triggering_user=new_user,
                created_at=at,
            )
            cache.pending_tickets.append(ticket)
    cache.assignments[new_user] = target.cluster
    cache.counters["cache_writes"] += 1

    # Only edges landing inside the chosen cluster update its aggregates;
    # cross-cluster edges are recounted when reconciliation merges.
    internal = [
        e
        for e in edges
        if cache.assignments.get(e.hi if e.lo == new_user else e.lo) == target.cluster
    ]
    heur, model, dev = _edge_counts(internal, cache.params.family_feature)
    target.heuristic_edges += heur
    target.model_edges += model
    target.device_edges += dev
    cache._rescore(target, at)
    cache.high_water_seq = graph.seq
    return (
        ClusterAssignment(
            user=new_user,
            cluster=target.cluster,
            member_count=target.member_count,
            score=target.score,
        ),
        ticket,
    )


def _rebuild_stats(
    rep: ClusterId, members: set, graph: Graph, params: ScoreParams
) -> ClusterStats:
    stats = ClusterStats(cluster=rep, members=set(members))
    for user in members:
        for lo, hi, kind, _score, src in graph.incident_edges(user):
            if lo != user or hi not in members:
                continue
            if kind == HEURISTIC:
                stats.heuristic_edges += 1
                if src == params.family_feature:
                    stats.device_edges += 1
            else:
                stats.model_edges += 1
    return stats


def _merge_into(
    rep: ClusterId,
    absorbed_members: list,
    cache: ClusterCache,
    graph: Graph,
    at: int,
    report: MergeReport,
) -> None:
    """Fold the users whose recomputed label became ``rep`` into that
    cluster, summing part aggregates and counting each cross-part edge
    exactly once (from its absorbed side, lower id first when both
    endpoints moved). Work is proportional to the absorbed parts, never
    to the surviving cluster."""
    params = cache.params
    prior_parts = sorted({cache.assignments.get(m, m) for m in absorbed_members})
    stats = cache.clusters.get(rep)
    if stats is None:
        stats = ClusterStats(cluster=rep, members={rep})
        cache.clusters[rep] = stats
    for part in prior_parts:
        part_stats = cache.clusters.pop(part, None) if part != rep else None
        if part_stats is None:
            stats.members.add(part)
            continue
        stats.members |= part_stats.members
        stats.heuristic_edges += part_stats.heuristic_edges
        stats.model_edges += part_stats.model_edges
        stats.device_edges += part_stats.device_edges
    stats.members.update(absorbed_members)

    assignments = cache.assignments
    for m in absorbed_members:
        pm = assignments.get(m, m)
        for _lo, _hi, kind, _score, src in graph.incident_edges(m):
            v = _hi if _lo == m else _lo
            pv = assignments.get(v, v)
            if pv == pm:
                continue  # already counted inside the part
            if pv != rep and not (m < v):
                continue  # both endpoints moved; the lower id counts it
            if kind == HEURISTIC:
                stats.heuristic_edges += 1
                if src == params.family_feature:
                    stats.device_edges += 1
            else:
                stats.model_edges += 1
    for m in absorbed_members:
        assignments[m] = rep
        report.reassigned_users += 1
    cache._rescore(stats, at)
    absorbed_ids = tuple(c for c in prior_parts if c != rep)
    if absorbed_ids:
        report.merges.append((rep, absorbed_ids))


def reconcile(
    tickets: list[MergeTicket],
    snapshot: EdgeSnapshot,
    cache: ClusterCache,
    graph: Graph,
    at: int,
    force: bool = False,
) -> MergeReport:
    """Recompute components over the snapshot and repair the cache.

    Between reconciles the only divergence sources are multi-cluster
    registrations (always ticketed) and cache misses (always flagged), so
    a clean cache short-circuits; ``force`` runs the recomputation
    unconditionally. The recomputation covers the full snapshot; only
    users whose label changed are touched in Python, which keeps a
    per-event cadence affordable.
    """
    if snapshot.seq < cache.high_water_seq:
        raise StaleSnapshotError(
            f"snapshot seq {snapshot.seq} older than cache high-water {cache.high_water_seq}"
        )
    report = MergeReport()
    pending = [t for t in tickets if t.status == "pending"]
    if not force and not pending and cache.inconsistency_flags == 0:
        return report

    n_cached = len(cache.assignments)
    keys = np.fromiter(cache.assignments.keys(), dtype=np.int64, count=n_cached)
    vals = np.fromiter(cache.assignments.values(), dtype=np.int64, count=n_cached)
    order = np.argsort(keys)
    keys, vals = keys[order], vals[order]
    ids, reps = components_arrays(snapshot.pairs(), keys)
    pos = np.minimum(np.searchsorted(keys, ids), max(n_cached - 1, 0))
    if n_cached:
        in_cache = keys[pos] == ids
        cached_rep = np.where(in_cache, vals[pos], ids)
    else:
        cached_rep = ids.copy()
    moved = cached_rep != reps

    if moved.any():
        moved_ids = ids[moved]
        moved_reps = reps[moved]
        group_order = np.argsort(moved_reps, kind="stable")
        moved_ids = moved_ids[group_order]
        moved_reps = moved_reps[group_order]
        starts = np.concatenate(
            [[0], np.nonzero(moved_reps[1:] != moved_reps[:-1])[0] + 1, [len(moved_reps)]]
        )
        for gi in range(len(starts) - 1):
            rep = int(moved_reps[starts[gi]])
            absorbed_members = [int(x) for x in moved_ids[starts[gi] : starts[gi + 1]]]
            _merge_into(rep, absorbed_members, cache, graph, at, report)
    for t in pending:
        t.status = "reconciled"
    report.tickets_consumed = len(pending)
    cache.pending_tickets = [t for t in cache.pending_tickets if t.status == "pending"]
    cache.inconsistency_flags = 0
    cache.high_water_seq = snapshot.seq
    return report


@dataclass(frozen=True)
class BatchHighlight:
    cluster: ClusterId
    member_count: int
    score: ClusterScore


def batch_flow(
    snapshot: EdgeSnapshot,
    graph: Graph,
    cache: ClusterCache,
    already_highlighted: set,
    manual_floor: float,
    at: int,
    cc=None,
) -> list[BatchHighlight]:
    """Full recomputation pass catching clusters the real-time path missed.

    Recomputes components and scores from scratch and emits every cluster
    at or above the manual floor that was never highlighted in real time.
    ``cc`` defaults to the alternating batch algorithm.
    """
    from .ccengine import alternating_cc

    compute = cc or (lambda pairs, nodes: alternating_cc(pairs, nodes=nodes)[0])
    labels = compute(snapshot.pairs(), list(cache.assignments))
    comps = labels_to_components(labels)
    out = []
    for rep, members in sorted(comps.items()):
        if rep in already_highlighted:
            continue
        stats = _rebuild_stats(rep, members, graph, cache.params)
        score = score_cluster(
            stats.member_count,
            stats.internal_edges,
            stats.heuristic_edges,
            stats.device_only,
            cache.params,
        )
        if score.value >= manual_floor:
            out.append(BatchHighlight(cluster=rep, member_count=len(members), score=score))
    return out
