"""Benchmark harness: per-event approach comparison and CC scaling.

Approach 1 traverses the new user's whole component per event, approach
2 reruns the full batch algorithm per event, approach 3 resolves the
assignment from the 1-degree neighborhood and the cluster cache. Each
probe reports operation counts next to wall time so the shape claims
hold independent of the machine.
"""

from __future__ import annotations

import csv
import gc
import time
from dataclasses import dataclass

import numpy as np

from .ccengine import alternating_cc, components_fast, traverse_component
from .detector import ClusterCache, ClusterStats, score_cluster
from .edges import Edge
from .graphstore import Graph


@dataclass
class BenchRow:
    approach: str
    component_size: int
    events: int
    p50_ms: float
    p95_ms: float
    mean_ops: float


def percentile(values: list[float], p: float) -> float:
    if not values:
        return float("nan")
    s = sorted(values)
    k = (len(s) - 1) * p
    f = int(k)
    c = min(f + 1, len(s) - 1)
    return s[f] * (c - k) + s[c] * (k - f) if f != c else s[f]


def linear_fit_r2(xs: list[float], ys: list[float]) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    a = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    pred = a @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


def _planted_graph(component_size: int, total_edges: int, seed: int) -> tuple[Graph, int]:
    """One planted connected component of the given size inside a sparse
    random background filling up to ``total_edges`` edges."""
    rng = np.random.default_rng(seed)
    g = Graph()
    ts = 0
    for u in range(1, component_size + 1):
        g.add_vertex(u, ts)
    # Spanning path plus extra random internal edges for density ~4.
    for u in range(2, component_size + 1):
        g.add_edge(Edge.between(u - 1, u, "heuristic", 1.0, ts, "ip"))
    extra = max(0, component_size * 2 - (component_size - 1))
    if component_size > 2:
        for _ in range(extra):
            a, b = rng.integers(1, component_size + 1, size=2)
            if a != b:
                g.add_edge(Edge.between(int(a), int(b), "heuristic", 1.0, ts, "ip"))
    background_nodes = max(total_edges // 2, 10)
    lo_bg = component_size + 1
    hi_bg = component_size + background_nodes
    while g.edge_count < total_edges:
        n = min(total_edges - g.edge_count, 10_000)
        pairs = rng.integers(lo_bg, hi_bg + 1, size=(n, 2))
        for a, b in pairs:
            if a != b:
                g.add_edge(Edge.between(int(a), int(b), "heuristic", 1.0, ts, "ip"))
    return g, component_size


def _bootstrap_cache(g: Graph) -> ClusterCache:
    labels = components_fast(g.snapshot_edges().pairs(), nodes=g.vertices())
    cache = ClusterCache()
    for user, rep in labels.items():
        cache.assignments[user] = rep
        stats = cache.clusters.get(rep)
        if stats is None:
            cache.clusters[rep] = ClusterStats(cluster=rep, members={user})
        else:
            stats.members.add(user)
    for stats in cache.clusters.values():
        stats.heuristic_edges = stats.member_count  # density stand-in; not scored here
        cache._rescore(stats, 0)
    return cache


def _probe_assign(cache: ClusterCache, neighbors: list[int]) -> int:
    """Approach-3 work for one hypothetical event, without mutating state:
    resolve each neighbor's cluster, choose the largest, rescore it."""
    ops = 0
    seen: dict[int, ClusterStats] = {}
    for n in neighbors:
        cluster = cache.cluster_of(n)
        ops += 1
        if cluster is not None:
            seen[cluster] = cache.clusters[cluster]
    if seen:
        target = max(seen.values(), key=lambda s: (s.member_count, -s.cluster))
        score_cluster(
            target.member_count + 1,
            target.internal_edges + len(neighbors),
            target.heuristic_edges + len(neighbors),
            False,
            cache.params,
        )
    return ops


def bench_approaches(
    component_sizes: tuple[int, ...] = (10, 100, 1000, 10_000),
    total_edges: int = 100_000,
    events: int = 200,
    cc_events: int = 3,
    seed: int = 7,
) -> list[BenchRow]:
    rows: list[BenchRow] = []
    rng = np.random.default_rng(seed)
    for size in component_sizes:
        g, _ = _planted_graph(size, total_edges, seed)
        cache = _bootstrap_cache(g)
        snapshot = g.snapshot_edges()
        members = list(range(1, size + 1))

        gc_was_enabled = gc.isenabled()
        gc.disable()
        try:
            lat1, ops1 = [], []
            for _ in range(events):
                start = members[int(rng.integers(0, len(members)))]
                t0 = time.perf_counter()
                visited = traverse_component(g, start)
                lat1.append(time.perf_counter() - t0)
                ops1.append(len(visited))

            lat2, ops2 = [], []
            pairs = snapshot.pairs()
            for _ in range(cc_events):
                t0 = time.perf_counter()
                _, rounds = alternating_cc(pairs)
                lat2.append(time.perf_counter() - t0)
                ops2.append(len(pairs) * rounds)

            lat3, ops3 = [], []
            for _ in range(events):
                k = min(3, len(members))
                neigh = [members[int(i)] for i in rng.integers(0, len(members), size=k)]
                t0 = time.perf_counter()
                ops = _probe_assign(cache, neigh)
                lat3.append(time.perf_counter() - t0)
                ops3.append(ops)
        finally:
            if gc_was_enabled:
                gc.enable()

        for name, lat, ops in (
            ("traverse", lat1, ops1),
            ("full_cc", lat2, ops2),
            ("cache_lookup", lat3, ops3),
        ):
            rows.append(
                BenchRow(
                    approach=name,
                    component_size=size,
                    events=len(lat),
                    p50_ms=percentile(lat, 0.50) * 1000,
                    p95_ms=percentile(lat, 0.95) * 1000,
                    mean_ops=float(np.mean(ops)),
                )
            )
    return rows


def bench_cc_scale(
    edge_counts: tuple[int, ...] = (10_000, 100_000, 1_000_000),
    avg_degree: float = 4.0,
    seed: int = 11,
    repeats: int = 1,
) -> list[dict]:
    """Alternating-algorithm wall time and rounds across edge scales."""
    rows = []
    rng = np.random.default_rng(seed)
    for m in edge_counts:
        n = max(2, int(m / (avg_degree / 2)))
        e = rng.integers(1, n + 1, size=(int(m), 2), dtype=np.int64)
        best = None
        rounds = 0
        for _ in range(repeats):
            t0 = time.perf_counter()
            _, rounds = alternating_cc(e)
            dt = time.perf_counter() - t0
            best = dt if best is None else min(best, dt)
        rows.append({"edges": int(m), "nodes": n, "seconds": best, "rounds": rounds})
    return rows


def write_approach_csv(rows: list[BenchRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["approach", "component_size", "events", "p50_ms", "p95_ms", "mean_ops"])
        for r in rows:
            w.writerow(
                [r.approach, r.component_size, r.events, f"{r.p50_ms:.6f}", f"{r.p95_ms:.6f}", f"{r.mean_ops:.1f}"]
            )


def write_cc_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["edges", "nodes", "seconds", "rounds"])
        for r in rows:
            w.writerow([r["edges"], r["nodes"], f"{r['seconds']:.6f}", r["rounds"]])
