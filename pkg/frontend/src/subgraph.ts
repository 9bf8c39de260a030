/**
 * Cluster subgraph view model and SVG rendering.
 *
 * Nodes sit on a circle (deterministic layout, no physics); heuristic
 * edges render red, model edges green. Clusters can reach thousands of
 * members, so rendering caps at the 200 highest-degree nodes and says so.
 */

import type { ClusterDetail, ClusterEdge } from "./types.js";

export const NODE_CAP = 200;

export interface SubgraphNode {
  user: number;
  x: number;
  y: number;
  blocked: boolean;
}

export interface SubgraphEdge {
  lo: number;
  hi: number;
  kind: "heuristic" | "model";
  cssClass: string;
  sourceFeature: string;
  score: number;
}

export interface SubgraphViewModel {
  nodes: SubgraphNode[];
  edges: SubgraphEdge[];
  elidedNodes: number;
  elidedEdges: number;
  width: number;
  height: number;
}

export const EDGE_CLASS: Record<"heuristic" | "model", string> = {
  heuristic: "edge-heuristic",
  model: "edge-model",
};

export function buildSubgraph(detail: ClusterDetail, size = 420): SubgraphViewModel {
  const degree = new Map<number, number>();
  for (const m of detail.members) degree.set(m.user, 0);
  for (const e of detail.edges) {
    degree.set(e.lo, (degree.get(e.lo) ?? 0) + 1);
    degree.set(e.hi, (degree.get(e.hi) ?? 0) + 1);
  }
  const ranked = [...detail.members].sort(
    (a, b) => (degree.get(b.user) ?? 0) - (degree.get(a.user) ?? 0) || a.user - b.user,
  );
  const kept = ranked.slice(0, NODE_CAP);
  const keptIds = new Set(kept.map((m) => m.user));

  const cx = size / 2;
  const cy = size / 2;
  const r = size / 2 - 30;
  const nodes: SubgraphNode[] = kept.map((m, i) => {
    const angle = (2 * Math.PI * i) / kept.length - Math.PI / 2;
    return {
      user: m.user,
      x: cx + r * Math.cos(angle),
      y: cy + r * Math.sin(angle),
      blocked: m.blocked,
    };
  });

  const edges: SubgraphEdge[] = [];
  let elidedEdges = 0;
  for (const e of detail.edges) {
    if (!keptIds.has(e.lo) || !keptIds.has(e.hi)) {
      elidedEdges += 1;
      continue;
    }
    edges.push({
      lo: e.lo,
      hi: e.hi,
      kind: e.kind,
      cssClass: EDGE_CLASS[e.kind],
      sourceFeature: e.source_feature,
      score: e.score,
    });
  }
  return {
    nodes,
    edges,
    elidedNodes: detail.members.length - kept.length,
    elidedEdges,
    width: size,
    height: size,
  };
}

const SVG_NS = "http://www.w3.org/2000/svg";

export function renderSubgraph(doc: Document, vm: SubgraphViewModel): SVGSVGElement {
  const svg = doc.createElementNS(SVG_NS, "svg") as SVGSVGElement;
  svg.setAttribute("viewBox", `0 0 ${vm.width} ${vm.height}`);
  svg.setAttribute("class", "subgraph");
  const pos = new Map(vm.nodes.map((n) => [n.user, n]));

  for (const e of vm.edges) {
    const a = pos.get(e.lo);
    const b = pos.get(e.hi);
    if (!a || !b) continue;
    const line = doc.createElementNS(SVG_NS, "line");
    line.setAttribute("x1", a.x.toFixed(1));
    line.setAttribute("y1", a.y.toFixed(1));
    line.setAttribute("x2", b.x.toFixed(1));
    line.setAttribute("y2", b.y.toFixed(1));
    line.setAttribute("class", e.cssClass);
    line.setAttribute("data-kind", e.kind);
    const title = doc.createElementNS(SVG_NS, "title");
    title.textContent = `${e.lo}–${e.hi} ${e.kind} (${e.sourceFeature}, ${e.score.toFixed(2)})`;
    line.appendChild(title);
    svg.appendChild(line);
  }
  for (const n of vm.nodes) {
    const circle = doc.createElementNS(SVG_NS, "circle");
    circle.setAttribute("cx", n.x.toFixed(1));
    circle.setAttribute("cy", n.y.toFixed(1));
    circle.setAttribute("r", "6");
    circle.setAttribute("class", n.blocked ? "node node-blocked" : "node");
    circle.setAttribute("data-user", String(n.user));
    const title = doc.createElementNS(SVG_NS, "title");
    title.textContent = `user ${n.user}${n.blocked ? " (blocked)" : ""}`;
    circle.appendChild(title);
    svg.appendChild(circle);
  }
  if (vm.elidedNodes > 0) {
    const note = doc.createElementNS(SVG_NS, "text");
    note.setAttribute("x", "8");
    note.setAttribute("y", String(vm.height - 8));
    note.setAttribute("class", "elision-note");
    note.textContent = `${vm.elidedNodes} lower-degree nodes hidden (largest-degree first)`;
    svg.appendChild(note);
  }
  return svg;
}
