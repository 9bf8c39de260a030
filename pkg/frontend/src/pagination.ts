/**
 * Cursor pager over the review queue.
 *
 * The server orders by score descending then age; the cursor is opaque.
 * An expired/garbled cursor restarts from the first page and reports it
 * via `noticedRestart` so the UI can show a notice instead of failing.
 */

import { ApiError, ReviewApiClient, type QueueQuery } from "./api.js";
import type { QueueItem } from "./types.js";

export class QueuePager {
  items: QueueItem[] = [];
  total = 0;
  noticedRestart = false;
  private cursor: string | null = null;
  private exhausted = false;
  private loading = false;

  constructor(
    private api: ReviewApiClient,
    private pageSize: number = 20,
    private filters: Omit<QueueQuery, "limit" | "cursor"> = {},
  ) {}

  get hasMore(): boolean {
    return !this.exhausted;
  }

  async reset(): Promise<void> {
    this.items = [];
    this.cursor = null;
    this.exhausted = false;
    this.noticedRestart = false;
    await this.loadMore();
  }

  async loadMore(): Promise<QueueItem[]> {
    if (this.exhausted || this.loading) return [];
    this.loading = true;
    try {
      let page;
      try {
        page = await this.api.queuePage({
          ...this.filters,
          limit: this.pageSize,
          cursor: this.cursor ?? undefined,
        });
      } catch (err) {
        if (err instanceof ApiError && err.status === 400 && this.cursor) {
          // expired cursor: restart from the first page with a notice
          this.noticedRestart = true;
          this.cursor = null;
          this.items = [];
          page = await this.api.queuePage({ ...this.filters, limit: this.pageSize });
        } else {
          throw err;
        }
      }
      this.items.push(...page.items);
      this.total = page.total;
      this.cursor = page.next_cursor;
      this.exhausted = page.next_cursor === null;
      return page.items;
    } finally {
      this.loading = false;
    }
  }

  /** Drop a decided cluster locally; the server is already authoritative. */
  remove(clusterId: number): void {
    this.items = this.items.filter((i) => i.cluster !== clusterId);
    this.total = Math.max(0, this.total - 1);
  }
}
