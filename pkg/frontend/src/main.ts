/**
 * Browser entry point: wires the controller to the static page.
 * Configuration comes from query parameters (?api=...&token=...) so the
 * build is a plain static asset.
 */

import { ReviewApiClient } from "./api.js";
import { ReviewController, StorageDraftStore } from "./controller.js";
import { renderDetail, renderNotice, renderQueue } from "./render.js";
import { parseSubsets } from "./split.js";
import type { Verdict } from "./types.js";

function requireEl<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const api = new ReviewApiClient(
    params.get("api") ?? "http://127.0.0.1:8080",
    params.get("token") ?? "reviewer-token",
  );
  const reviewer = params.get("reviewer") ?? "console";
  const controller = new ReviewController(
    api,
    reviewer,
    new StorageDraftStore(window.localStorage),
  );

  const queueBox = requireEl<HTMLElement>("queue");
  const detailBox = requireEl<HTMLElement>("detail");
  const noticeBox = requireEl<HTMLElement>("notices");
  const loadMoreBtn = requireEl<HTMLButtonElement>("load-more");

  const redrawQueue = () =>
    renderQueue(document, queueBox, controller.pager.items, async (clusterId) => {
      const detail = await controller.select(clusterId);
      renderDetail(document, detailBox, detail);
    });

  async function act(verdict: Verdict): Promise<void> {
    const selected = controller.selected;
    if (!selected) {
      renderNotice(document, noticeBox, "Select a cluster first.", "notice");
      return;
    }
    const subsets =
      verdict === "split"
        ? parseSubsets((requireEl<HTMLInputElement>("split-input")).value)
        : undefined;
    const notes = (requireEl<HTMLInputElement>("notes-input")).value;
    const outcome = await controller.decide(selected.cluster, verdict, { subsets, notes });
    switch (outcome.kind) {
      case "ok":
        renderNotice(
          document,
          noticeBox,
          verdict === "split"
            ? `Split into clusters ${outcome.newClusters.join(", ")}`
            : `${verdict}: ${outcome.membersAffected} users affected`,
          "notice notice-ok",
        );
        break;
      case "conflict":
        renderNotice(
          document,
          noticeBox,
          `Already decided by ${outcome.existingReviewer}: ${outcome.existingVerdict}`,
          "notice notice-conflict",
        );
        break;
      case "invalid":
        renderNotice(document, noticeBox, `Invalid split: ${outcome.errors.join("; ")}`, "notice notice-error");
        return;
      case "draft-saved":
        renderNotice(
          document,
          noticeBox,
          `Network failure: decision kept as draft (${outcome.error})`,
          "notice notice-error",
        );
        return;
    }
    detailBox.replaceChildren();
    redrawQueue();
  }

  requireEl<HTMLButtonElement>("confirm-btn").addEventListener("click", () => act("confirmed_mi"));
  requireEl<HTMLButtonElement>("reject-btn").addEventListener("click", () => act("rejected"));
  requireEl<HTMLButtonElement>("split-btn").addEventListener("click", () => act("split"));
  loadMoreBtn.addEventListener("click", async () => {
    await controller.pager.loadMore();
    redrawQueue();
  });
  requireEl<HTMLButtonElement>("retry-drafts").addEventListener("click", async () => {
    const retried = await controller.retryDrafts();
    renderNotice(document, noticeBox, `Retried ${retried} draft decision(s).`, "notice");
  });

  await controller.start();
  if (controller.pager.noticedRestart) {
    renderNotice(document, noticeBox, "Cursor expired; restarted from the first page.", "notice");
  }
  redrawQueue();
}

if (typeof window !== "undefined" && typeof document !== "undefined" && document.getElementById("queue")) {
  boot().catch((err) => console.error("console failed to start", err));
}
