"""Embedded user-association graph with an append-only edge log.

Vertices carry registration metadata, edges are canonical undirected
pairs deduplicated per pair, and the 1-degree neighborhood lookup is a
dict hit, which is the only query the real-time path needs. Every
accepted edge is appended to a TSV log whose replay reconstructs the
edge state exactly; a torn final line is survivable, a corrupt interior
line is not.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass

import numpy as np

from .attributes import UserId
from .edges import Edge

LOG_COLUMNS = ("lo", "hi", "kind", "score", "created_at", "seq", "source_feature")


class UnknownUserError(KeyError):
    def __init__(self, user: UserId):
        super().__init__(f"unknown user {user}")
        self.user = user


class SelfLoopError(ValueError):
    pass


class CorruptLogError(ValueError):
    def __init__(self, last_good_seq: int, lineno: int):
        super().__init__(f"corrupt edge log at line {lineno}; last good seq {last_good_seq}")
        self.last_good_seq = last_good_seq


@dataclass
class VertexMeta:
    registered_at: int
    status: str = "active"  # active | blocked
    auto_created: bool = False


class _GrowArray:
    """Append-only int64/float64 column with cheap point-in-time copies."""

    def __init__(self, dtype):
        self._buf = np.empty(1024, dtype=dtype)
        self._n = 0

    def append(self, value) -> None:
        if self._n == len(self._buf):
            grown = np.empty(len(self._buf) * 2, dtype=self._buf.dtype)
            grown[: self._n] = self._buf
            self._buf = grown
        self._buf[self._n] = value
        self._n += 1

    def view(self, n: int | None = None) -> np.ndarray:
        return self._buf[: self._n if n is None else n].copy()


@dataclass(frozen=True)
class EdgeSnapshot:
    """Consistent point-in-time edge list (canonical, deduplicated)."""

    seq: int
    lo: np.ndarray
    hi: np.ndarray
    kind: np.ndarray  # 0 = heuristic, 1 = model
    score: np.ndarray

    def pairs(self) -> np.ndarray:
        return np.column_stack([self.lo, self.hi])

    def __len__(self) -> int:
        return int(self.seq)


KIND_CODES = {"heuristic": 0, "model": 1}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}


class Graph:
    """Single writer, many readers; snapshots are linearizable with adds."""

    def __init__(self, log_path: str | os.PathLike | None = None, fsync: bool = False):
        self._vertices: dict[UserId, VertexMeta] = {}
        self._adj: dict[UserId, dict[UserId, tuple[str, float, str]]] = {}
        self._lo = _GrowArray(np.int64)
        self._hi = _GrowArray(np.int64)
        self._kind = _GrowArray(np.int64)
        self._score = _GrowArray(np.float64)
        self._created = _GrowArray(np.int64)
        self._seq = 0
        self._lock = threading.Lock()
        self._fsync = fsync
        self._log = open(log_path, "a", encoding="utf-8") if log_path is not None else None
        self.truncated_tail = False

    # -- vertices ---------------------------------------------------------

    def add_vertex(self, user: UserId, registered_at: int) -> None:
        with self._lock:
            meta = self._vertices.get(user)
            if meta is None:
                self._vertices[user] = VertexMeta(registered_at=registered_at)
                self._adj[user] = {}
            elif meta.auto_created:
                meta.registered_at = registered_at
                meta.auto_created = False

    def has_vertex(self, user: UserId) -> bool:
        return user in self._vertices

    def vertex(self, user: UserId) -> VertexMeta:
        try:
            return self._vertices[user]
        except KeyError:
            raise UnknownUserError(user) from None

    def vertices(self) -> list[UserId]:
        return list(self._vertices)

    def set_status(self, user: UserId, status: str) -> None:
        self.vertex(user).status = status

    @property
    def vertex_count(self) -> int:
        return len(self._vertices)

    # -- edges ------------------------------------------------------------

    @property
    def edge_count(self) -> int:
        return self._seq

    @property
    def seq(self) -> int:
        return self._seq

    def add_edge(self, e: Edge) -> str:
        """Returns "added" or "duplicate"; duplicates leave state unchanged."""
        if e.lo == e.hi:
            raise SelfLoopError(f"self-loop on user {e.lo}")
        with self._lock:
            for endpoint in (e.lo, e.hi):
                if endpoint not in self._vertices:
                    self._vertices[endpoint] = VertexMeta(
                        registered_at=e.created_at, auto_created=True
                    )
                    self._adj[endpoint] = {}
            if e.hi in self._adj[e.lo]:
                return "duplicate"
            payload = (e.kind, e.score, e.source_feature)
            self._adj[e.lo][e.hi] = payload
            self._adj[e.hi][e.lo] = payload
            self._seq += 1
            self._lo.append(e.lo)
            self._hi.append(e.hi)
            self._kind.append(KIND_CODES[e.kind])
            self._score.append(e.score)
            self._created.append(e.created_at)
            if self._log is not None:
                self._log.write(
                    f"{e.lo}\t{e.hi}\t{e.kind}\t{e.score!r}\t{e.created_at}\t{self._seq}\t{e.source_feature}\n"
                )
                self._log.flush()
                if self._fsync:
                    os.fsync(self._log.fileno())
            return "added"

    def neighbors(self, user: UserId) -> set[tuple[UserId, str, float]]:
        """Exact 1-degree neighborhood; O(1 + degree)."""
        try:
            adj = self._adj[user]
        except KeyError:
            raise UnknownUserError(user) from None
        return {(v, kind, score) for v, (kind, score, _src) in adj.items()}

    def neighbor_ids(self, user: UserId) -> list[UserId]:
        try:
            return list(self._adj[user])
        except KeyError:
            raise UnknownUserError(user) from None

    def incident_edges(self, user: UserId) -> list[tuple[UserId, UserId, str, float, str]]:
        try:
            adj = self._adj[user]
        except KeyError:
            raise UnknownUserError(user) from None
        out = []
        for v, (kind, score, src) in adj.items():
            lo, hi = (user, v) if user < v else (v, user)
            out.append((lo, hi, kind, score, src))
        return out

    def edge_payload(self, a: UserId, b: UserId) -> tuple[str, float, str] | None:
        return self._adj.get(a, {}).get(b)

    def degree_sum(self) -> int:
        return sum(len(adj) for adj in self._adj.values())

    def snapshot_edges(self) -> EdgeSnapshot:
        with self._lock:
            n = self._seq
            return EdgeSnapshot(
                seq=n,
                lo=self._lo.view(n),
                hi=self._hi.view(n),
                kind=self._kind.view(n),
                score=self._score.view(n),
            )

    def close(self) -> None:
        if self._log is not None:
            self._log.close()
            self._log = None

    # -- persistence --------------------------------------------------------

    def export_edges_tsv(self, path: str | os.PathLike) -> int:
        """Point-in-time TSV edge list consumable by the cc CLI."""
        with self._lock:
            n = self._seq
            created = self._created.view(n)
            lo, hi = self._lo.view(n), self._hi.view(n)
            kind, score = self._kind.view(n), self._score.view(n)
        with open(path, "w", encoding="utf-8") as fh:
            for i in range(n):
                fh.write(
                    f"{lo[i]}\t{hi[i]}\t{KIND_NAMES[int(kind[i])]}"
                    f"\t{score[i]!r}\t{created[i]}\t{i + 1}\n"
                )
        return n


def _parse_log_line(line: str, lineno: int, last_good: int) -> Edge:
    parts = line.split("\t")
    if len(parts) != len(LOG_COLUMNS):
        raise CorruptLogError(last_good, lineno)
    try:
        return Edge(
            lo=int(parts[0]),
            hi=int(parts[1]),
            kind=parts[2],
            score=float(parts[3]),
            created_at=int(parts[4]),
            source_feature=parts[6],
        )
    except (ValueError, KeyError):
        raise CorruptLogError(last_good, lineno) from None


def load(log_path: str | os.PathLike, attach: bool = False, fsync: bool = False) -> Graph:
    """Rebuild a Graph by replaying its edge log.

    A final line without a terminating newline (torn write) is dropped
    and flagged on ``graph.truncated_tail``; a malformed interior line
    raises CorruptLogError carrying the last good sequence number.

    With ``attach=True`` the torn tail (if any) is truncated away and the
    log is reopened for appending, so ingestion can continue in place.
    """
    g = Graph()
    with open(log_path, "rb") as fh:
        blob = fh.read()
    raw = blob.decode("utf-8")
    good_bytes = len(blob)
    if raw:
        lines = raw.split("\n")
        tail = lines.pop()  # text after the last newline; complete logs leave ""
        for lineno, line in enumerate(lines, start=1):
            e = _parse_log_line(line, lineno, g.seq)
            g.add_edge(e)
        if tail:
            try:
                e = _parse_log_line(tail, len(lines) + 1, g.seq)
            except CorruptLogError:
                g.truncated_tail = True
                good_bytes = len(blob) - len(tail.encode("utf-8"))
            else:
                # Complete record missing only the newline: keep it.
                g.add_edge(e)
                if attach:
                    with open(log_path, "a", encoding="utf-8") as fh:
                        fh.write("\n")
    if attach:
        if g.truncated_tail:
            with open(log_path, "rb+") as fh:
                fh.truncate(good_bytes)
        g._log = open(log_path, "a", encoding="utf-8")
        g._fsync = fsync
    return g
