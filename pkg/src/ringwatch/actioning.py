"""Detection pipeline orchestration, actioning, and review feedback.

Ties the modules together per event: normalize -> candidates ->
heuristic edges -> model edges -> graph add -> cluster assign -> score
-> act. Every acknowledged registration is durably logged first, so a
crash-restart replay reconstructs identical state; review decisions are
append-only and recorded with their position in the event stream so the
full action history replays bit-for-bit.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attributes import (
    AttributeRecord,
    AttributeSchema,
    NormalizationError,
    RawRegistrationEvent,
    UserId,
    ValidationError,
    normalize,
)
from .classifier import EdgeClassifier, emit_model_edges
from .config import ConfigError, ServiceConfig
from .detector import (
    BatchHighlight,
    ClusterCache,
    ClusterId,
    ClusterStats,
    batch_flow,
    assign_on_registration,
    reconcile,
)
from .edges import (
    BlockingIndex,
    Edge,
    RetriableError,
    generate_candidates,
    heuristic_edges,
    update_blocking_index,
)
from .graphstore import Graph

log = logging.getLogger(__name__)

AUTO_BLOCK = "auto_block"
QUEUED_MANUAL = "queued_manual"
NO_ACTION = "no_action"

REALTIME = "realtime"
BATCH = "batch"
MONITORING = "monitoring"

CONFIRMED = "confirmed_mi"
REJECTED = "rejected"
SPLIT = "split"

_STAGES = (
    "normalize",
    "candidates",
    "heuristic_edges",
    "model_edges",
    "graph_add",
    "assign",
    "score_act",
)


class DuplicateDecisionError(ValueError):
    def __init__(self, existing: "ReviewDecision"):
        super().__init__(f"cluster {existing.cluster} already decided: {existing.verdict}")
        self.existing = existing


class NotQueuedError(KeyError):
    pass


@dataclass(frozen=True)
class ActionRecord:
    cluster: ClusterId
    action: str
    score: float
    decided_at: int
    flow: str
    seq: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "cluster": self.cluster,
                "action": self.action,
                "score": self.score,
                "decided_at": self.decided_at,
                "flow": self.flow,
                "seq": self.seq,
            },
            sort_keys=True,
            separators=(",", ":"),
        )


@dataclass(frozen=True)
class ReviewDecision:
    cluster: ClusterId
    verdict: str
    reviewer: str
    decided_at: int
    notes: str = ""
    subsets: tuple = ()
    members: frozenset = frozenset()
    review_flow: str = "manual"  # auto | manual: which flow's precision this feeds

    def __post_init__(self):
        if self.verdict not in (CONFIRMED, REJECTED, SPLIT):
            raise ValueError(f"unknown verdict {self.verdict!r}")


@dataclass(frozen=True)
class MonitoringSample:
    cluster: ClusterId
    sampled_at: int
    rate: float


@dataclass
class QueueEntry:
    cluster: ClusterId
    queued_at: int
    origin: str  # realtime | batch | monitoring
    action_at_queue: str
    score_at_queue: float
    decided: bool = False


def decide(thresholds, score_value: float, flow: str) -> str:
    """Route a scored cluster: strict auto-block above the ceiling in the
    real-time flow only; batch output always goes to humans."""
    if flow == REALTIME and score_value > thresholds.auto_block:
        return AUTO_BLOCK
    if score_value >= thresholds.manual_floor:
        return QUEUED_MANUAL
    return NO_ACTION


def sample_for_monitoring(
    clusters: list[ClusterId], rate: float, seed: int, at: int
) -> list[MonitoringSample]:
    """Seeded Bernoulli sample of the day's highlights, all flows included."""
    if not (0.01 <= rate <= 0.10):
        raise ConfigError(f"monitoring sample rate {rate} outside [0.01, 0.10]")
    rng = np.random.default_rng(seed)
    out = []
    for cluster in sorted(clusters):
        if rng.random() < rate:
            out.append(MonitoringSample(cluster=cluster, sampled_at=at, rate=rate))
    return out


class FeedbackStore:
    """Reviewer ground truth: confirmed clusters and validated-unique sets."""

    def __init__(self):
        self.decisions: list[ReviewDecision] = []
        self.by_cluster: dict[ClusterId, list[ReviewDecision]] = {}

    def add(self, d: ReviewDecision) -> None:
        self.decisions.append(d)
        self.by_cluster.setdefault(d.cluster, []).append(d)

    def confirmed_clusters(self) -> list[set]:
        return [set(d.members) for d in self.decisions if d.verdict == CONFIRMED]

    def unique_sets(self) -> list[set]:
        return [set(d.members) for d in self.decisions if d.verdict == REJECTED]

    def find_duplicate(self, cluster: ClusterId, members: frozenset) -> ReviewDecision | None:
        for d in self.by_cluster.get(cluster, []):
            if d.members == members:
                return d
        return None


def _percentile(values: list[float], p: float) -> float:
    if not values:
        return float("nan")
    s = sorted(values)
    k = (len(s) - 1) * p
    f = int(k)
    c = min(f + 1, len(s) - 1)
    return s[f] * (c - k) + s[c] * (k - f) if f != c else s[f]


class DetectionService:
    """Single-writer ingest pipeline plus read-mostly review surfaces."""

    def __init__(
        self,
        config: ServiceConfig,
        schema: AttributeSchema,
        model: EdgeClassifier | None = None,
        state_dir: str | os.PathLike | None = None,
    ):
        config.validate()
        self.config = config
        self.schema = schema
        self.model = model
        self.records: dict[UserId, AttributeRecord] = {}
        self.index = BlockingIndex(schema)
        self.cache = ClusterCache(params=config.score)
        self.feedback = FeedbackStore()
        self.blocked: set[UserId] = set()
        self.queue: dict[ClusterId, QueueEntry] = {}
        self.actions: list[ActionRecord] = []
        self.active_actions: dict[ClusterId, ActionRecord] = {}
        self.highlighted: set[ClusterId] = set()
        self.event_seq = 0
        self.ingested_users: set[UserId] = set()
        self.last_reconcile_at: int | None = None
        self.latencies: dict[str, list[float]] = {s: [] for s in _STAGES}
        self.retry_queue: list[tuple[RawRegistrationEvent, int]] = []

        self.state_dir = Path(state_dir) if state_dir is not None else None
        self._event_log = None
        self._decision_log = None
        self._dead_letter = None
        if self.state_dir is not None:
            self.state_dir.mkdir(parents=True, exist_ok=True)
            graph_log = self.state_dir / "edges.tsv"
            self.graph = Graph(log_path=graph_log, fsync=False)
            self._event_log = open(self.state_dir / "events.ndjson", "a", encoding="utf-8")
            self._decision_log = open(self.state_dir / "decisions.ndjson", "a", encoding="utf-8")
        else:
            self.graph = Graph()

    # -- durability ---------------------------------------------------------

    def _append_event(self, event: RawRegistrationEvent) -> None:
        if self._event_log is None:
            return
        self._event_log.write(event.to_json() + "\n")
        self._event_log.flush()
        if self.config.fsync:
            os.fsync(self._event_log.fileno())

    def _append_decision_entry(self, entry: dict) -> None:
        if self._decision_log is None:
            return
        self._decision_log.write(json.dumps(entry, sort_keys=True, separators=(",", ":")) + "\n")
        self._decision_log.flush()
        if self.config.fsync:
            os.fsync(self._decision_log.fileno())

    def dead_letter(self, event_json: str, reason: str) -> None:
        if self.state_dir is None:
            return
        with open(self.state_dir / "dead_letter.ndjson", "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"event": event_json, "reason": reason}) + "\n")

    def close(self) -> None:
        for fh in (self._event_log, self._decision_log):
            if fh is not None:
                fh.close()
        self.graph.close()

    # -- pipeline -----------------------------------------------------------

    def ingest_registration(self, event: RawRegistrationEvent, _logged: bool = False) -> dict:
        """Run the full per-event pipeline; returns assignment, action and
        a per-stage latency breakdown. The event is durably logged before
        any acknowledgment."""
        timings: dict[str, float] = {}
        t0 = time.perf_counter()
        try:
            record = normalize(event, self.schema)
        except (ValidationError, NormalizationError) as exc:
            self.dead_letter(event.to_json(), str(exc))
            raise
        timings["normalize"] = time.perf_counter() - t0

        if event.user_id in self.ingested_users:
            return {"user": event.user_id, "duplicate": True}
        if not _logged:
            self._append_event(event)

        t = time.perf_counter()
        candidates = generate_candidates(record, self.index, exclude=self.blocked)
        timings["candidates"] = time.perf_counter() - t

        t = time.perf_counter()
        heur = heuristic_edges(record, candidates, self.records, self.schema)
        timings["heuristic_edges"] = time.perf_counter() - t

        t = time.perf_counter()
        model_edges: list[Edge] = []
        if self.model is not None and candidates:
            already = {e.lo if e.hi == record.user_id else e.hi for e in heur}
            model_edges = emit_model_edges(
                record,
                candidates,
                self.records,
                self.schema,
                self.model,
                self.config.thresholds.edge_threshold,
                skip=already,
            )
        timings["model_edges"] = time.perf_counter() - t

        t = time.perf_counter()
        self.graph.add_vertex(record.user_id, record.registered_at)
        accepted = [e for e in heur + model_edges if self.graph.add_edge(e) == "added"]
        self.records[record.user_id] = record
        update_blocking_index(record, self.index)
        timings["graph_add"] = time.perf_counter() - t

        t = time.perf_counter()
        assignment, ticket = assign_on_registration(
            record.user_id, accepted, self.cache, self.graph, at=record.registered_at
        )
        timings["assign"] = time.perf_counter() - t

        t = time.perf_counter()
        action = self._act(self.cache.stats(assignment.cluster), REALTIME, record.registered_at)
        timings["score_act"] = time.perf_counter() - t

        self.event_seq += 1
        self.ingested_users.add(event.user_id)
        for stage, dt in timings.items():
            bucket = self.latencies[stage]
            bucket.append(dt)
            if len(bucket) > 10_000:
                del bucket[: len(bucket) - 10_000]
        self._maybe_reconcile(record.registered_at)
        return {
            "user": record.user_id,
            "cluster": assignment.cluster,
            "member_count": assignment.member_count,
            "score": assignment.score.terms(),
            "action": action.action,
            "merge_ticket": sorted(ticket.clusters) if ticket else None,
            "latency_ms": {k: v * 1000.0 for k, v in timings.items()},
        }

    def ingest_with_retry(self, event: RawRegistrationEvent, max_attempts: int = 3) -> dict:
        """Retriable failures re-queue the event; it is never dropped.

        The event is logged once on the first attempt; retries replay the
        pipeline without duplicating the log entry.
        """
        logged = False
        for attempt in range(max_attempts):
            try:
                return self.ingest_registration(event, _logged=logged)
            except RetriableError as exc:
                logged = True  # the write-ahead append precedes the failing stage
                log.warning("retriable failure (attempt %d): %s", attempt + 1, exc)
                time.sleep(0.01 * 2**attempt)
        self.retry_queue.append((event, max_attempts))
        raise RetriableError(f"event for user {event.user_id} re-queued after {max_attempts} attempts")

    def _act(self, stats: ClusterStats, flow: str, at: int) -> ActionRecord:
        action = decide(self.config.thresholds, stats.score.value, flow)
        assert action != AUTO_BLOCK or (
            stats.score.value > self.config.thresholds.auto_block and flow == REALTIME
        )
        record = ActionRecord(
            cluster=stats.cluster,
            action=action,
            score=stats.score.value,
            decided_at=at,
            flow=flow,
            seq=len(self.actions) + 1,
        )
        self.actions.append(record)
        self.active_actions[stats.cluster] = record
        if action == AUTO_BLOCK:
            self.highlighted.add(stats.cluster)
            for member in stats.members:
                self.blocked.add(member)
                if self.graph.has_vertex(member):
                    self.graph.set_status(member, "blocked")
            self.queue.pop(stats.cluster, None)
        elif action == QUEUED_MANUAL:
            self.highlighted.add(stats.cluster)
            entry = self.queue.get(stats.cluster)
            if entry is None or entry.decided:
                self.queue[stats.cluster] = QueueEntry(
                    cluster=stats.cluster,
                    queued_at=at,
                    origin=flow,
                    action_at_queue=action,
                    score_at_queue=stats.score.value,
                )
            else:
                entry.score_at_queue = stats.score.value
        else:
            self.queue.pop(stats.cluster, None)
        return record

    # -- reconciliation and batch ---------------------------------------------

    def _maybe_reconcile(self, at: int) -> None:
        if self.last_reconcile_at is None:
            self.last_reconcile_at = at
            return
        due = at - self.last_reconcile_at >= self.config.reconcile_interval_ms
        backlog = len(self.cache.pending_tickets) >= self.config.reconcile_pending_limit
        if due or backlog:
            self.reconcile_now(at)

    def reconcile_now(self, at: int, force: bool = False):
        report = reconcile(
            self.cache.pending_tickets,
            self.graph.snapshot_edges(),
            self.cache,
            self.graph,
            at=at,
            force=force,
        )
        self.last_reconcile_at = at
        for survivor, absorbed in report.merges:
            for old in absorbed:
                self.queue.pop(old, None)
                self.highlighted.discard(old)
                self.active_actions.pop(old, None)
            self._act(self.cache.stats(survivor), REALTIME, at)
        return report

    def run_batch_flow(self, at: int) -> list[BatchHighlight]:
        """Nightly full pass; emits clusters the real-time path missed."""
        self.reconcile_now(at, force=True)
        highlights = batch_flow(
            self.graph.snapshot_edges(),
            self.graph,
            self.cache,
            already_highlighted=self.highlighted,
            manual_floor=self.config.thresholds.manual_floor,
            at=at,
        )
        for h in highlights:
            self._act(self.cache.stats(h.cluster), BATCH, at)
        return highlights

    # -- review -----------------------------------------------------------------

    def queue_entries(self) -> list[QueueEntry]:
        return [e for e in self.queue.values() if not e.decided]

    def record_decision(
        self,
        cluster: ClusterId,
        verdict: str,
        reviewer: str,
        at: int,
        notes: str = "",
        subsets: list[list[UserId]] | None = None,
        _replaying: bool = False,
    ) -> tuple[ReviewDecision, list[ClusterId]]:
        """Persist a reviewer verdict and apply its effects.

        confirmed_mi blocks the members; rejected releases them as
        validated-unique; split re-clusters per the given subsets and
        rescores only those. A second decision for the same cluster with
        unchanged membership is rejected with a pointer to the original.
        """
        stats = self.cache.clusters.get(cluster)
        if stats is None:
            raise NotQueuedError(f"cluster {cluster} no longer exists")
        members = frozenset(stats.members)
        existing = self.feedback.find_duplicate(cluster, members)
        if existing is not None:
            raise DuplicateDecisionError(existing)
        entry = self.queue.get(cluster)
        if entry is None or entry.decided:
            raise NotQueuedError(f"cluster {cluster} is not queued or sampled")

        clean_subsets: tuple = ()
        if verdict == SPLIT:
            if not subsets:
                raise ValueError("split decision requires member subsets")
            flat = [u for s in subsets for u in s]
            if len(flat) != len(set(flat)) or set(flat) != set(members):
                raise ValueError("split subsets must partition the cluster members")
            clean_subsets = tuple(tuple(sorted(s)) for s in subsets)

        decision = ReviewDecision(
            cluster=cluster,
            verdict=verdict,
            reviewer=reviewer,
            decided_at=at,
            notes=notes,
            subsets=clean_subsets,
            members=members,
            review_flow="auto" if entry.action_at_queue == AUTO_BLOCK else "manual",
        )
        self.feedback.add(decision)
        entry.decided = True
        if not _replaying:
            self._append_decision_entry(
                {
                    "type": "decision",
                    "after_event_seq": self.event_seq,
                    "cluster": cluster,
                    "verdict": verdict,
                    "reviewer": reviewer,
                    "decided_at": at,
                    "notes": notes,
                    "subsets": [list(s) for s in clean_subsets],
                }
            )

        new_clusters: list[ClusterId] = []
        if verdict == CONFIRMED:
            for member in members:
                self.blocked.add(member)
                if self.graph.has_vertex(member):
                    self.graph.set_status(member, "blocked")
        elif verdict == SPLIT:
            new_clusters = self._apply_split(cluster, clean_subsets, entry, at)
        return decision, new_clusters

    def _apply_split(
        self, cluster: ClusterId, subsets: tuple, entry: QueueEntry, at: int
    ) -> list[ClusterId]:
        from .detector import _rebuild_stats

        del self.cache.clusters[cluster]
        self.queue.pop(cluster, None)
        self.highlighted.discard(cluster)
        self.active_actions.pop(cluster, None)
        new_ids = []
        flow = BATCH if entry.origin == BATCH else REALTIME
        for subset in subsets:
            rep = min(subset)
            stats = _rebuild_stats(rep, set(subset), self.graph, self.cache.params)
            self.cache._rescore(stats, at)
            self.cache.clusters[rep] = stats
            for m in subset:
                self.cache.assignments[m] = rep
            new_ids.append(rep)
            self._act(stats, flow, at)
        return new_ids

    def run_monitoring_sample(self, day: int, at: int, _replaying: bool = False) -> list[MonitoringSample]:
        """Queue a seeded sample of the day's highlights for review."""
        pool = sorted(self.highlighted)
        digest = hashlib.blake2b(
            f"{self.config.monitoring_seed}:{day}".encode(), digest_size=4
        ).digest()
        seed = int.from_bytes(digest, "big")
        samples = sample_for_monitoring(pool, self.config.thresholds.sample_rate, seed, at)
        for s in samples:
            if s.cluster in self.queue and not self.queue[s.cluster].decided:
                continue
            active = self.active_actions.get(s.cluster)
            self.queue[s.cluster] = QueueEntry(
                cluster=s.cluster,
                queued_at=at,
                origin=MONITORING,
                action_at_queue=active.action if active else NO_ACTION,
                score_at_queue=active.score if active else 0.0,
            )
        if not _replaying:
            self._append_decision_entry(
                {"type": "monitoring", "after_event_seq": self.event_seq, "day": day, "at": at}
            )
        return samples

    # -- observability ------------------------------------------------------------

    def metrics(self) -> dict:
        reviewed = {"auto": [0, 0], "manual": [0, 0]}  # [confirmed, rejected]
        for d in self.feedback.decisions:
            if d.verdict == SPLIT:
                continue
            reviewed[d.review_flow][0 if d.verdict == CONFIRMED else 1] += 1

        def precision(pair):
            confirmed, rejected = pair
            total = confirmed + rejected
            return confirmed / total if total else None

        return {
            "precision": {
                "auto": precision(reviewed["auto"]),
                "manual": precision(reviewed["manual"]),
            },
            "reviews": {
                "auto": {"confirmed": reviewed["auto"][0], "rejected": reviewed["auto"][1]},
                "manual": {"confirmed": reviewed["manual"][0], "rejected": reviewed["manual"][1]},
            },
            "queue_depth": len(self.queue_entries()),
            "pending_merge_tickets": len(self.cache.pending_tickets),
            "events_ingested": self.event_seq,
            "edges": self.graph.edge_count,
            "clusters": len(self.cache.clusters),
            "model_version": self.model.version if self.model else None,
            "latency_ms": {
                stage: {
                    "p50": _percentile(values, 0.50) * 1000.0,
                    "p95": _percentile(values, 0.95) * 1000.0,
                    "p99": _percentile(values, 0.99) * 1000.0,
                }
                for stage, values in self.latencies.items()
                if values
            },
        }

    def actions_json(self) -> str:
        return "".join(a.to_json() + "\n" for a in self.actions)

    # -- replay -------------------------------------------------------------------

    def replay_logs(self, events_path: str | os.PathLike, decisions_path: str | os.PathLike | None = None) -> int:
        """Rebuild state from the event log plus the review-activity log.

        Decision entries are applied at their recorded position in the
        event stream, reproducing the original interleaving exactly.
        """
        by_position: dict[int, list[dict]] = {}
        if decisions_path is not None and Path(decisions_path).exists():
            with open(decisions_path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    entry = json.loads(line)
                    by_position.setdefault(entry["after_event_seq"], []).append(entry)

        def apply_at(pos: int) -> None:
            for entry in by_position.get(pos, ()):
                if entry["type"] == "monitoring":
                    self.run_monitoring_sample(entry["day"], entry["at"], _replaying=True)
                else:
                    self.record_decision(
                        cluster=entry["cluster"],
                        verdict=entry["verdict"],
                        reviewer=entry["reviewer"],
                        at=entry["decided_at"],
                        notes=entry["notes"],
                        subsets=[list(s) for s in entry["subsets"]] or None,
                        _replaying=True,
                    )

        count = 0
        apply_at(0)
        if Path(events_path).exists():
            with open(events_path, "rb") as fh:
                blob = fh.read()
            text = blob.decode("utf-8")
            lines = text.split("\n")
            tail = lines.pop()
            if tail:
                log.warning("event log has a torn final record; dropped")
            for line in lines:
                if not line:
                    continue
                event = RawRegistrationEvent.from_json(line)
                self.ingest_registration(event, _logged=True)
                count += 1
                apply_at(self.event_seq)
        return count


def _truncate_to_last_newline(path: Path) -> None:
    if not path.exists():
        return
    blob = path.read_bytes()
    cut = blob.rfind(b"\n") + 1
    if cut != len(blob):
        with open(path, "rb+") as fh:
            fh.truncate(cut)


def open_service(
    config: ServiceConfig,
    schema: AttributeSchema,
    model: EdgeClassifier | None,
    state_dir: str | os.PathLike,
) -> DetectionService:
    """Open (or recover) a stateful service rooted at ``state_dir``.

    Existing event and decision logs are replayed before the service
    accepts new traffic, so an acknowledged event is never lost. Torn
    final records (a crash mid-append) are truncated away; the edge log
    is regenerated by the replay itself.
    """
    state = Path(state_dir)
    state.mkdir(parents=True, exist_ok=True)
    events = state / "events.ndjson"
    decisions = state / "decisions.ndjson"
    edges = state / "edges.tsv"

    if events.exists() and events.stat().st_size > 0:
        _truncate_to_last_newline(events)
        _truncate_to_last_newline(decisions)
        if edges.exists():
            edges.unlink()
        svc = DetectionService(config, schema, model, state_dir=state)
        svc.replay_logs(events, decisions)
        return svc
    return DetectionService(config, schema, model, state_dir=state)
