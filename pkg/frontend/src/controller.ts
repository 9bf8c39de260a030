/**
 * Review session controller: paging, selection, decide/conflict flow.
 *
 * The console is stateless beyond decision drafts: every view is
 * reproducible from the API. A decision that fails on the network is
 * kept as a retriable draft; a 409 conflict drops the item and surfaces
 * the existing verdict.
 */

import { ReviewApiClient, type DecisionResult } from "./api.js";
import { QueuePager } from "./pagination.js";
import { validateSplit } from "./split.js";
import type { ClusterDetail, DecisionRequest, Verdict } from "./types.js";

export interface DraftStore {
  load(): Record<string, DecisionRequest>;
  save(drafts: Record<string, DecisionRequest>): void;
}

export class MemoryDraftStore implements DraftStore {
  private drafts: Record<string, DecisionRequest> = {};

  load(): Record<string, DecisionRequest> {
    return { ...this.drafts };
  }

  save(drafts: Record<string, DecisionRequest>): void {
    this.drafts = { ...drafts };
  }
}

export class StorageDraftStore implements DraftStore {
  constructor(
    private storage: Pick<Storage, "getItem" | "setItem">,
    private key = "ringwatch-drafts",
  ) {}

  load(): Record<string, DecisionRequest> {
    try {
      return JSON.parse(this.storage.getItem(this.key) ?? "{}");
    } catch {
      return {};
    }
  }

  save(drafts: Record<string, DecisionRequest>): void {
    this.storage.setItem(this.key, JSON.stringify(drafts));
  }
}

export type DecideOutcome =
  | { kind: "ok"; membersAffected: number; newClusters: number[] }
  | { kind: "conflict"; existingVerdict: string; existingReviewer: string }
  | { kind: "invalid"; errors: string[] }
  | { kind: "draft-saved"; error: string };

export class ReviewController {
  pager: QueuePager;
  selected: ClusterDetail | null = null;

  constructor(
    private api: ReviewApiClient,
    private reviewer: string,
    private drafts: DraftStore = new MemoryDraftStore(),
    pageSize = 20,
  ) {
    this.pager = new QueuePager(api, pageSize);
  }

  async start(): Promise<void> {
    await this.pager.reset();
  }

  async select(clusterId: number): Promise<ClusterDetail> {
    this.selected = await this.api.clusterDetail(clusterId);
    return this.selected;
  }

  pendingDrafts(): Record<string, DecisionRequest> {
    return this.drafts.load();
  }

  async decide(
    clusterId: number,
    verdict: Verdict,
    options: { notes?: string; subsets?: number[][]; decidedAt?: number } = {},
  ): Promise<DecideOutcome> {
    if (verdict === "split") {
      const members = this.selected?.cluster === clusterId
        ? this.selected.members.map((m) => m.user)
        : (await this.select(clusterId)).members.map((m) => m.user);
      const validation = validateSplit(members, options.subsets ?? []);
      if (!validation.ok) {
        return { kind: "invalid", errors: validation.errors };
      }
    }
    const request: DecisionRequest = {
      verdict,
      reviewer: this.reviewer,
      decided_at: options.decidedAt ?? Date.now(),
      notes: options.notes ?? "",
      subsets: options.subsets,
    };
    let result: DecisionResult;
    try {
      result = await this.api.submitDecision(clusterId, request);
    } catch (err) {
      // network/server failure: retain the decision as a retriable draft
      const drafts = this.drafts.load();
      drafts[String(clusterId)] = request;
      this.drafts.save(drafts);
      return { kind: "draft-saved", error: err instanceof Error ? err.message : String(err) };
    }
    this.clearDraft(clusterId);
    if (result.kind === "conflict") {
      this.pager.remove(clusterId);
      if (this.selected?.cluster === clusterId) this.selected = null;
      return {
        kind: "conflict",
        existingVerdict: result.body.existing.verdict,
        existingReviewer: result.body.existing.reviewer,
      };
    }
    this.pager.remove(clusterId);
    if (this.selected?.cluster === clusterId) this.selected = null;
    return {
      kind: "ok",
      membersAffected: result.body.members_affected,
      newClusters: result.body.new_clusters,
    };
  }

  async retryDrafts(): Promise<number> {
    const drafts = this.drafts.load();
    let retried = 0;
    for (const [clusterId, request] of Object.entries(drafts)) {
      try {
        await this.api.submitDecision(Number(clusterId), request);
        delete drafts[clusterId];
        retried += 1;
      } catch {
        // still down; keep the draft
      }
    }
    this.drafts.save(drafts);
    return retried;
  }

  private clearDraft(clusterId: number): void {
    const drafts = this.drafts.load();
    if (String(clusterId) in drafts) {
      delete drafts[String(clusterId)];
      this.drafts.save(drafts);
    }
  }
}
