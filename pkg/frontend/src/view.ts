/** HTML renderers. Pure string builders so they test without a DOM. */

import { layoutNetwork } from "./dag.js";
import { gaugeColor, gaugeLabel, gaugePosition } from "./gauge.js";
import type { Annotation } from "./spans.js";
import type { ComparisonRow } from "./store.js";
import type { JobSnapshot, QueryPayload, ResultPayload } from "./types.js";

export function escapeHtml(s: string): string {
  return s
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

export function renderGauge(kHat: number): string {
  const position = gaugePosition(kHat);
  const percent = (position * 100).toFixed(1);
  const color = gaugeColor(kHat);
  return `
<div class="gauge" data-k="${kHat}" data-position="${position}">
  <div class="gauge-track">
    <div class="gauge-fill" style="width: ${percent}%; background: ${color}"></div>
    <div class="gauge-needle" style="left: ${percent}%"></div>
  </div>
  <div class="gauge-reading">k ≈ ${kHat.toLocaleString("en-US")} — ${gaugeLabel(kHat)}</div>
</div>`;
}

export function renderQueryTable(queries: QueryPayload[]): string {
  const rows: string[] = [];
  const walk = (q: QueryPayload, depth: number) => {
    const badge = q.simplified ? ' <span class="badge simplified">simplified</span>' : "";
    const answer = q.answer === null ? "—" : String(q.answer);
    const confidence = q.confidence === null ? "—" : q.confidence.toFixed(2);
    rows.push(
      `<tr class="depth-${depth}"><td>${"&nbsp;&nbsp;".repeat(depth)}${escapeHtml(q.text)}${badge}</td>` +
        `<td>${q.kind}</td><td>${answer}</td><td>${confidence}</td></tr>`,
    );
    for (const sub of q.subqueries) walk(sub, depth + 1);
  };
  for (const q of queries) walk(q, 0);
  return `
<table class="queries">
  <thead><tr><th>query</th><th>kind</th><th>answer</th><th>confidence</th></tr></thead>
  <tbody>${rows.join("\n")}</tbody>
</table>`;
}

export function renderDag(result: ResultPayload): string {
  const layout = layoutNetwork(result.order, result.parents);
  const byId = new Map(layout.nodes.map((n) => [n.id, n]));
  const edges = layout.edges
    .map((e) => {
      const a = byId.get(e.from)!;
      const b = byId.get(e.to)!;
      const mx = (a.x + b.x) / 2;
      return `<path d="M ${a.x} ${a.y} Q ${mx} ${a.y - 45} ${b.x} ${b.y}" class="edge" marker-end="url(#arrow)"/>`;
    })
    .join("\n");
  const nodes = layout.nodes
    .map(
      (n) =>
        `<g class="node" transform="translate(${n.x}, ${n.y})">` +
        `<circle r="10"/><text y="28" text-anchor="middle">${escapeHtml(n.id)}</text></g>`,
    )
    .join("\n");
  return `
<svg class="dag" viewBox="0 0 ${layout.width} ${layout.height}" width="${layout.width}" height="${layout.height}">
  <defs><marker id="arrow" viewBox="0 0 8 8" refX="8" refY="4" markerWidth="7" markerHeight="7" orient="auto">
    <path d="M 0 0 L 8 4 L 0 8 z"/></marker></defs>
  ${edges}
  ${nodes}
</svg>`;
}

export function renderTranscript(snapshot: JobSnapshot): string {
  const failing = snapshot.state === "failed";
  const items = snapshot.stages.map((s, i) => {
    const isLast = i === snapshot.stages.length - 1;
    const cls = failing && isLast ? "stage failed" : "stage";
    const retries = s.retries > 0 ? ` (retry ${s.retries})` : "";
    return `<li class="${cls}">${escapeHtml(s.stage)}${retries}</li>`;
  });
  const error = failing ? `<p class="error">${escapeHtml(snapshot.error ?? "failed")}</p>` : "";
  return `<ol class="transcript">${items.join("\n")}</ol>${error}`;
}

export function renderComparisons(rows: ComparisonRow[]): string {
  const body = rows
    .map((row, i) => {
      const name = i === 0 ? "all disclosures" : row.includedIds.join(", ");
      const delta = row.deltaText ? `<div class="delta">${escapeHtml(row.deltaText)}</div>` : "";
      return (
        `<tr data-job="${row.jobId}"><td>${escapeHtml(name)}</td>` +
        `<td class="k">${row.kHat.toLocaleString("en-US")}</td>` +
        `<td>${renderGauge(row.kHat)}${delta}</td></tr>`
      );
    })
    .join("\n");
  return `
<table class="comparisons">
  <thead><tr><th>included</th><th>k̂</th><th>meter</th></tr></thead>
  <tbody>${body}</tbody>
</table>`;
}

export function renderAnnotatedText(text: string, annotations: Annotation[]): string {
  const sorted = [...annotations].sort((a, b) => a.start - b.start);
  let cursor = 0;
  const parts: string[] = [];
  for (const a of sorted) {
    parts.push(escapeHtml(text.slice(cursor, a.start)));
    parts.push(
      `<mark class="span cat-${a.category}" data-id="${a.id}" title="${a.category}">` +
        `${escapeHtml(text.slice(a.start, a.end))}</mark>`,
    );
    cursor = a.end;
  }
  parts.push(escapeHtml(text.slice(cursor)));
  return parts.join("");
}
