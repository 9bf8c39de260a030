/**
 * Typed client for the detection service API.
 *
 * Decisions can conflict (another reviewer got there first); that case is
 * surfaced as a structured result rather than an exception so the UI can
 * show the existing verdict.
 */

import type {
  ClusterDetail,
  ConflictResponse,
  DecisionRequest,
  DecisionResponse,
  Metrics,
  QueuePage,
} from "./types.js";

export interface QueueQuery {
  limit?: number;
  cursor?: string;
  flow?: string;
  minScore?: number;
  maxScore?: number;
}

export type DecisionResult =
  | { kind: "ok"; body: DecisionResponse }
  | { kind: "conflict"; body: ConflictResponse };

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`API error ${status}: ${detail}`);
  }
}

export class ReviewApiClient {
  constructor(
    private baseUrl: string,
    private token: string,
    private fetchFn: typeof fetch = fetch,
  ) {}

  private headers(): Record<string, string> {
    return {
      "Content-Type": "application/json",
      "X-Review-Token": this.token,
    };
  }

  private async get<T>(path: string): Promise<T> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`, { headers: this.headers() });
    if (!res.ok) {
      throw new ApiError(res.status, await res.text());
    }
    return (await res.json()) as T;
  }

  async queuePage(query: QueueQuery = {}): Promise<QueuePage> {
    const params = new URLSearchParams();
    if (query.limit !== undefined) params.set("limit", String(query.limit));
    if (query.cursor) params.set("cursor", query.cursor);
    if (query.flow) params.set("flow", query.flow);
    if (query.minScore !== undefined) params.set("min_score", String(query.minScore));
    if (query.maxScore !== undefined) params.set("max_score", String(query.maxScore));
    const qs = params.toString();
    return this.get<QueuePage>(`/v1/review/queue${qs ? `?${qs}` : ""}`);
  }

  async clusterDetail(clusterId: number): Promise<ClusterDetail> {
    return this.get<ClusterDetail>(`/v1/clusters/${clusterId}`);
  }

  async metrics(): Promise<Metrics> {
    return this.get<Metrics>(`/v1/metrics`);
  }

  async submitDecision(clusterId: number, request: DecisionRequest): Promise<DecisionResult> {
    const res = await this.fetchFn(`${this.baseUrl}/v1/review/${clusterId}/decision`, {
      method: "POST",
      headers: this.headers(),
      body: JSON.stringify(request),
    });
    if (res.status === 409) {
      return { kind: "conflict", body: (await res.json()) as ConflictResponse };
    }
    if (!res.ok) {
      throw new ApiError(res.status, await res.text());
    }
    return { kind: "ok", body: (await res.json()) as DecisionResponse };
  }

  async ingestRegistration(payload: object): Promise<unknown> {
    const res = await this.fetchFn(`${this.baseUrl}/v1/registrations`, {
      method: "POST",
      headers: this.headers(),
      body: JSON.stringify(payload),
    });
    if (!res.ok) {
      throw new ApiError(res.status, await res.text());
    }
    return res.json();
  }
}
