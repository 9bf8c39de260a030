/**
 * Payload types for the detection service's v1 JSON API.
 * These mirror the server responses exactly; the console never invents
 * fields client-side.
 */

export interface ScoreTerms {
  value: number;
  size_base: number;
  edge_density: number;
  heuristic_fraction: number;
  family_discount: number;
}

export type FlowOrigin = "realtime" | "batch" | "monitoring";

export interface QueueItem {
  cluster: number;
  score: number;
  score_terms: ScoreTerms | null;
  member_count: number;
  flow: FlowOrigin;
  queued_at: number;
}

export interface QueuePage {
  items: QueueItem[];
  next_cursor: string | null;
  total: number;
}

export interface ClusterMember {
  user: number;
  registered_at: number | null;
  attributes: Record<string, string | number | string[] | null>;
  blocked: boolean;
}

export type EdgeKind = "heuristic" | "model";

export interface ClusterEdge {
  lo: number;
  hi: number;
  kind: EdgeKind;
  score: number;
  source_feature: string;
}

export interface ClusterDetail {
  cluster: number;
  members: ClusterMember[];
  edges: ClusterEdge[];
  score: ScoreTerms | null;
  action: string | null;
  flow: string | null;
}

export type Verdict = "confirmed_mi" | "rejected" | "split";

export interface DecisionRequest {
  verdict: Verdict;
  reviewer: string;
  decided_at: number;
  notes?: string;
  subsets?: number[][];
}

export interface DecisionResponse {
  cluster: number;
  verdict: Verdict;
  members_affected: number;
  new_clusters: number[];
}

export interface ConflictResponse {
  detail: string;
  existing: { verdict: string; reviewer: string; decided_at: number };
}

export interface Metrics {
  precision: { auto: number | null; manual: number | null };
  reviews: {
    auto: { confirmed: number; rejected: number };
    manual: { confirmed: number; rejected: number };
  };
  queue_depth: number;
  pending_merge_tickets: number;
  events_ingested: number;
  edges: number;
  clusters: number;
  model_version: string | null;
  latency_ms: Record<string, { p50: number; p95: number; p99: number }>;
}
