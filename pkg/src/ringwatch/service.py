"""HTTP JSON API over the detection service.

Stable v1 surface consumed by the review console:

    POST /v1/registrations                 ingest one event
    GET  /v1/users/{id}/cluster            current assignment
    GET  /v1/review/queue?limit=&cursor=   paged review queue
    GET  /v1/clusters/{id}                 members, edges, score breakdown
    POST /v1/review/{cluster_id}/decision  reviewer verdict
    GET  /v1/metrics                       precision, queue depth, latency

Review endpoints require the static reviewer token in X-Review-Token.
"""

from __future__ import annotations

import base64
import json
import threading

from fastapi import Body, FastAPI, Header, HTTPException, Query
from fastapi.responses import JSONResponse

from .attributes import (
    ABSENT,
    NormalizationError,
    RawRegistrationEvent,
    ValidationError,
)
from .actioning import (
    DetectionService,
    DuplicateDecisionError,
    NotQueuedError,
    QueueEntry,
)


def _encode_cursor(key: tuple) -> str:
    return base64.urlsafe_b64encode(json.dumps(key).encode()).decode()


def _decode_cursor(cursor: str) -> tuple:
    try:
        score, queued_at, cluster = json.loads(base64.urlsafe_b64decode(cursor.encode()))
        return float(score), int(queued_at), int(cluster)
    except Exception:
        raise HTTPException(status_code=400, detail="expired or malformed cursor") from None


def _entry_sort_key(e: QueueEntry) -> tuple:
    # Score descending, then oldest first, then id for total order.
    return (-e.score_at_queue, e.queued_at, e.cluster)


def _serialize_attrs(attrs: dict) -> dict:
    out = {}
    for name, value in attrs.items():
        if value is ABSENT:
            out[name] = None
        elif isinstance(value, frozenset):
            out[name] = sorted(value)
        else:
            out[name] = value
    return out


def create_app(svc: DetectionService) -> FastAPI:
    app = FastAPI(title="ringwatch", version="1.0")
    lock = threading.RLock()

    def require_token(token: str | None) -> None:
        if token != svc.config.reviewer_token:
            raise HTTPException(status_code=401, detail="invalid reviewer token")

    @app.post("/v1/registrations")
    def ingest(payload: dict = Body(...)):
        event = RawRegistrationEvent(
            user_id=payload.get("user_id"),
            registered_at=payload.get("registered_at"),
            attributes=payload.get("attributes", {}),
        )
        with lock:
            try:
                return svc.ingest_registration(event)
            except (ValidationError, NormalizationError) as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from None

    @app.get("/v1/users/{user_id}/cluster")
    def user_cluster(user_id: int):
        with lock:
            view = svc.cache.assignment_view(user_id)
            if view is None:
                raise HTTPException(status_code=404, detail=f"unknown user {user_id}")
            return {
                "user": view.user,
                "cluster": view.cluster,
                "member_count": view.member_count,
                "score": view.score.terms(),
                "blocked": view.user in svc.blocked,
            }

    @app.get("/v1/review/queue")
    def review_queue(
        limit: int = Query(20, ge=1, le=200),
        cursor: str | None = None,
        flow: str | None = None,
        min_score: float | None = None,
        max_score: float | None = None,
        x_review_token: str | None = Header(default=None),
    ):
        require_token(x_review_token)
        with lock:
            entries = sorted(svc.queue_entries(), key=_entry_sort_key)
            if flow:
                entries = [e for e in entries if e.origin == flow]
            if min_score is not None:
                entries = [e for e in entries if e.score_at_queue >= min_score]
            if max_score is not None:
                entries = [e for e in entries if e.score_at_queue <= max_score]
            if cursor:
                after = _decode_cursor(cursor)
                entries = [e for e in entries if _entry_sort_key(e) > (-after[0], after[1], after[2])]
            page = entries[:limit]
            items = []
            for e in page:
                stats = svc.cache.clusters.get(e.cluster)
                items.append(
                    {
                        "cluster": e.cluster,
                        "score": e.score_at_queue,
                        "score_terms": stats.score.terms() if stats and stats.score else None,
                        "member_count": stats.member_count if stats else 0,
                        "flow": e.origin,
                        "queued_at": e.queued_at,
                    }
                )
            next_cursor = None
            if len(entries) > limit:
                last = page[-1]
                next_cursor = _encode_cursor((last.score_at_queue, last.queued_at, last.cluster))
            return {"items": items, "next_cursor": next_cursor, "total": len(entries)}

    @app.get("/v1/clusters/{cluster_id}")
    def cluster_detail(cluster_id: int, x_review_token: str | None = Header(default=None)):
        require_token(x_review_token)
        with lock:
            stats = svc.cache.clusters.get(cluster_id)
            if stats is None:
                raise HTTPException(status_code=404, detail=f"unknown cluster {cluster_id}")
            members = []
            for user in sorted(stats.members):
                record = svc.records.get(user)
                members.append(
                    {
                        "user": user,
                        "registered_at": record.registered_at if record else None,
                        "attributes": _serialize_attrs(record.attrs) if record else {},
                        "blocked": user in svc.blocked,
                    }
                )
            seen = set()
            edges = []
            for user in sorted(stats.members):
                for lo, hi, kind, score, src in svc.graph.incident_edges(user):
                    if (lo, hi) in seen or hi not in stats.members or lo not in stats.members:
                        continue
                    seen.add((lo, hi))
                    edges.append(
                        {"lo": lo, "hi": hi, "kind": kind, "score": score, "source_feature": src}
                    )
            active = svc.active_actions.get(cluster_id)
            return {
                "cluster": cluster_id,
                "members": members,
                "edges": edges,
                "score": stats.score.terms() if stats.score else None,
                "action": active.action if active else None,
                "flow": active.flow if active else None,
            }

    @app.post("/v1/review/{cluster_id}/decision")
    def post_decision(
        cluster_id: int,
        payload: dict = Body(...),
        x_review_token: str | None = Header(default=None),
    ):
        require_token(x_review_token)
        with lock:
            try:
                decision, new_clusters = svc.record_decision(
                    cluster=cluster_id,
                    verdict=payload.get("verdict"),
                    reviewer=payload.get("reviewer", "anonymous"),
                    at=payload.get("decided_at", 0),
                    notes=payload.get("notes", ""),
                    subsets=payload.get("subsets"),
                )
            except NotQueuedError as exc:
                raise HTTPException(status_code=404, detail=str(exc)) from None
            except DuplicateDecisionError as exc:
                return JSONResponse(
                    status_code=409,
                    content={
                        "detail": "cluster already decided",
                        "existing": {
                            "verdict": exc.existing.verdict,
                            "reviewer": exc.existing.reviewer,
                            "decided_at": exc.existing.decided_at,
                        },
                    },
                )
            except ValueError as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from None
            return {
                "cluster": cluster_id,
                "verdict": decision.verdict,
                "members_affected": len(decision.members),
                "new_clusters": new_clusters,
            }

    @app.get("/v1/metrics")
    def metrics():
        with lock:
            return svc.metrics()

    @app.post("/v1/admin/batch-flow")
    def run_batch(payload: dict = Body(default={}), x_review_token: str | None = Header(default=None)):
        require_token(x_review_token)
        with lock:
            at = payload.get("at", 0)
            highlights = svc.run_batch_flow(at)
            return {"highlighted": [h.cluster for h in highlights]}

    @app.post("/v1/admin/monitoring-sample")
    def run_sample(payload: dict = Body(default={}), x_review_token: str | None = Header(default=None)):
        require_token(x_review_token)
        with lock:
            samples = svc.run_monitoring_sample(
                day=payload.get("day", 0), at=payload.get("at", 0)
            )
            return {"sampled": [s.cluster for s in samples]}

    return app
