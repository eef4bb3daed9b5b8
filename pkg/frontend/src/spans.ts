/** Disclosure span annotation over the pasted document.
 *
 * Spans are [start, end) character offsets into the text, each with one of
 * the fixed categories. Overlaps are rejected: a character belongs to at
 * most one disclosure.
 */

import type { Category, DisclosurePayload } from "./types.js";
import { CATEGORIES } from "./types.js";

export interface Annotation {
  id: string;
  start: number;
  end: number;
  span: string;
  category: Category;
}

export type AnnotateResult =
  | { ok: true; annotation: Annotation }
  | { ok: false; reason: string };

export function annotateSpan(
  text: string,
  existing: Annotation[],
  start: number,
  end: number,
  category: string,
): AnnotateResult {
  if (!(CATEGORIES as string[]).includes(category)) {
    return { ok: false, reason: `unknown category "${category}"` };
  }
  if (!(Number.isInteger(start) && Number.isInteger(end))) {
    return { ok: false, reason: "offsets must be integers" };
  }
  if (start < 0 || end > text.length || start >= end) {
    return { ok: false, reason: "selection is outside the document" };
  }
  for (const a of existing) {
    if (start < a.end && a.start < end) {
      return { ok: false, reason: `overlaps existing span "${a.span}"` };
    }
  }
  const span = text.slice(start, end);
  if (!span.trim()) {
    return { ok: false, reason: "selection is only whitespace" };
  }
  const id = nextId(existing);
  return {
    ok: true,
    annotation: { id, start, end, span, category: category as Category },
  };
}

function nextId(existing: Annotation[]): string {
  let n = existing.length + 1;
  const taken = new Set(existing.map((a) => a.id));
  while (taken.has(`d${n}`)) n += 1;
  return `d${n}`;
}

export function toDisclosures(annotations: Annotation[]): DisclosurePayload[] {
  return annotations.map((a) => ({ id: a.id, span: a.span, category: a.category }));
}
