/**
 * DOM rendering for the queue list and cluster detail pane. Pure
 * render-from-state functions; all state lives in the controller.
 */

import { attributesInCommon, memberRows } from "./detail.js";
import { buildSubgraph, renderSubgraph } from "./subgraph.js";
import type { ClusterDetail, QueueItem } from "./types.js";

function el(doc: Document, tag: string, cls?: string, text?: string): HTMLElement {
  const node = doc.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderQueue(
  doc: Document,
  container: HTMLElement,
  items: QueueItem[],
  onSelect: (clusterId: number) => void,
): void {
  container.replaceChildren();
  if (items.length === 0) {
    container.appendChild(el(doc, "p", "empty-state", "Queue is empty; nothing to review."));
    return;
  }
  for (const item of items) {
    const row = el(doc, "div", "queue-item");
    row.dataset.cluster = String(item.cluster);
    row.appendChild(el(doc, "span", "queue-cluster", `#${item.cluster}`));
    row.appendChild(el(doc, "span", "queue-score", item.score.toFixed(2)));
    row.appendChild(el(doc, "span", "queue-members", `${item.member_count} users`));
    row.appendChild(el(doc, "span", `queue-flow flow-${item.flow}`, item.flow));
    row.addEventListener("click", () => onSelect(item.cluster));
    container.appendChild(row);
  }
}

export function renderDetail(doc: Document, container: HTMLElement, detail: ClusterDetail): void {
  container.replaceChildren();
  const header = el(doc, "div", "detail-header");
  header.appendChild(el(doc, "h2", undefined, `Cluster ${detail.cluster}`));
  if (detail.score) {
    header.appendChild(
      el(
        doc,
        "p",
        "score-breakdown",
        `score ${detail.score.value.toFixed(2)} = base ${detail.score.size_base.toFixed(2)}` +
          ` + density ${detail.score.edge_density.toFixed(2)}` +
          ` + heuristic ${detail.score.heuristic_fraction.toFixed(2)}` +
          ` − family ${detail.score.family_discount.toFixed(2)}`,
      ),
    );
  }
  if (detail.action) {
    header.appendChild(el(doc, "p", "detail-action", `${detail.action} (${detail.flow})`));
  }
  container.appendChild(header);

  container.appendChild(renderSubgraph(doc, buildSubgraph(detail)));

  const shared = attributesInCommon(detail.members);
  const sharedBox = el(doc, "div", "shared-attributes");
  sharedBox.appendChild(el(doc, "h3", undefined, "Attributes in common"));
  if (shared.length === 0) {
    sharedBox.appendChild(el(doc, "p", "empty-state", "No shared attribute values."));
  } else {
    for (const s of shared.slice(0, 20)) {
      sharedBox.appendChild(
        el(doc, "div", "shared-row", `${s.name} = ${s.value} → users ${s.users.join(", ")}`),
      );
    }
  }
  container.appendChild(sharedBox);

  const table = el(doc, "table", "member-table");
  const rows = memberRows(detail);
  const head = el(doc, "tr");
  head.appendChild(el(doc, "th", undefined, "user"));
  head.appendChild(el(doc, "th", undefined, "status"));
  for (const attr of rows[0]?.attributes ?? []) {
    head.appendChild(el(doc, "th", undefined, attr.name));
  }
  table.appendChild(head);
  for (const row of rows) {
    const tr = el(doc, "tr", row.blocked ? "member-blocked" : undefined);
    tr.appendChild(el(doc, "td", undefined, String(row.user)));
    tr.appendChild(el(doc, "td", undefined, row.blocked ? "blocked" : "active"));
    for (const attr of row.attributes) {
      tr.appendChild(el(doc, "td", attr.value === null ? "attr-absent" : undefined, attr.value ?? "—"));
    }
    table.appendChild(tr);
  }
  container.appendChild(table);
}

export function renderNotice(doc: Document, container: HTMLElement, message: string, cls = "notice"): void {
  const note = el(doc, "div", cls, message);
  container.prepend(note);
}
