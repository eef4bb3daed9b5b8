/** Session state: one document, its annotations, runs, and what-if rows.
 *
 * The store never computes k. It submits jobs, polls them, and copies the
 * service's numbers into comparison rows; the gauge position is a pure
 * rendering of the payload's k_hat. What-if rows are keyed by their included
 * id set, so toggling back to an already-explored subset reuses the cached
 * row instead of resubmitting.
 */

import { ApiClient } from "./api.js";
import { gaugePosition } from "./gauge.js";
import type { Annotation } from "./spans.js";
import { annotateSpan, toDisclosures } from "./spans.js";
import type { JobSnapshot, ResultPayload } from "./types.js";

export interface ComparisonRow {
  jobId: string;
  includedIds: string[];
  kHat: number;
  equation: string;
  gaugePosition: number;
  /** "removing X multiplies k by ~Y" versus the baseline row, if any. */
  deltaText: string;
}

export interface SessionState {
  text: string;
  annotations: Annotation[];
  excluded: Set<string>;
  runningJobId: string | null;
  baseline: { jobId: string; result: ResultPayload } | null;
  lastSnapshot: JobSnapshot | null;
  comparisons: ComparisonRow[];
  error: string | null;
}

export type Listener = (state: SessionState) => void;

export class SessionStore {
  private state: SessionState = {
    text: "",
    annotations: [],
    excluded: new Set(),
    runningJobId: null,
    baseline: null,
    lastSnapshot: null,
    comparisons: [],
    error: null,
  };
  private listeners: Listener[] = [];

  constructor(
    private api: ApiClient,
    private pollIntervalMs = 1000,
  ) {}

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private emit() {
    for (const l of this.listeners) l(this.getState());
  }

  getState(): SessionState {
    return { ...this.state, excluded: new Set(this.state.excluded) };
  }

  setText(text: string) {
    this.state = {
      ...this.state,
      text,
      annotations: [],
      excluded: new Set(),
      baseline: null,
      comparisons: [],
      lastSnapshot: null,
      error: null,
    };
    this.emit();
  }

  annotate(start: number, end: number, category: string): string | null {
    const result = annotateSpan(this.state.text, this.state.annotations, start, end, category);
    if (!result.ok) {
      this.state = { ...this.state, error: result.reason };
      this.emit();
      return null;
    }
    this.state = {
      ...this.state,
      annotations: [...this.state.annotations, result.annotation],
      error: null,
    };
    this.emit();
    return result.annotation.id;
  }

  removeAnnotation(id: string) {
    this.state = {
      ...this.state,
      annotations: this.state.annotations.filter((a) => a.id !== id),
    };
    this.state.excluded.delete(id);
    this.emit();
  }

  get canRun(): boolean {
    return this.state.annotations.length > 0 && this.state.runningJobId === null;
  }

  includedIds(): string[] {
    return this.state.annotations.map((a) => a.id).filter((id) => !this.state.excluded.has(id));
  }

  /** Submit the full document, poll to completion, record the baseline row. */
  async run(config: Record<string, unknown> = {}): Promise<JobSnapshot> {
    if (this.state.annotations.length === 0) {
      throw new Error("annotate at least one disclosure before running");
    }
    const jobId = await this.api.submitEstimate({
      document: { id: "ui-session", text: this.state.text },
      disclosures: toDisclosures(this.state.annotations),
      config,
    });
    this.state = { ...this.state, runningJobId: jobId, error: null };
    this.emit();
    const snapshot = await this.api.pollJob(jobId, {
      intervalMs: this.pollIntervalMs,
      onUpdate: (s) => {
        this.state = { ...this.state, lastSnapshot: s };
        this.emit();
      },
    });
    this.state = { ...this.state, runningJobId: null, lastSnapshot: snapshot };
    if (snapshot.state === "done" && snapshot.result) {
      this.state.baseline = { jobId, result: snapshot.result };
      this.state.excluded = new Set();
      this.state.comparisons = [
        rowFromResult(jobId, this.state.annotations.map((a) => a.id), snapshot.result, null, []),
      ];
    } else {
      this.state.error = snapshot.error ?? "run failed";
    }
    this.emit();
    return snapshot;
  }

  /** Toggle one disclosure and re-estimate the remaining subset. */
  async whatifToggle(disclosureId: string): Promise<ComparisonRow> {
    const baseline = this.state.baseline;
    if (!baseline) throw new Error("run a baseline estimate first");
    if (!this.state.annotations.some((a) => a.id === disclosureId)) {
      throw new Error(`unknown disclosure ${disclosureId}`);
    }
    const excluded = new Set(this.state.excluded);
    if (excluded.has(disclosureId)) excluded.delete(disclosureId);
    else excluded.add(disclosureId);

    const include = this.state.annotations
      .map((a) => a.id)
      .filter((id) => !excluded.has(id));
    if (include.length === 0) {
      this.state = { ...this.state, error: "cannot exclude every disclosure" };
      this.emit();
      throw new Error("cannot exclude every disclosure");
    }

    const cached = this.state.comparisons.find((row) => sameSet(row.includedIds, include));
    if (cached) {
      this.state = { ...this.state, excluded, error: null };
      this.emit();
      return cached;
    }

    const jobId = await this.api.submitWhatIf(baseline.jobId, include);
    const snapshot = await this.api.pollJob(jobId, { intervalMs: this.pollIntervalMs });
    if (snapshot.state !== "done" || !snapshot.result) {
      this.state = { ...this.state, error: snapshot.error ?? "what-if failed" };
      this.emit();
      throw new Error(this.state.error ?? "what-if failed");
    }
    const removed = this.state.annotations
      .filter((a) => !include.includes(a.id))
      .map((a) => a.span);
    const row = rowFromResult(jobId, include, snapshot.result, baseline.result, removed);
    this.state = {
      ...this.state,
      excluded,
      comparisons: [...this.state.comparisons, row],
      error: null,
    };
    this.emit();
    return row;
  }
}

function rowFromResult(
  jobId: string,
  includedIds: string[],
  result: ResultPayload,
  baseline: ResultPayload | null,
  removedSpans: string[],
): ComparisonRow {
  let deltaText = "";
  if (baseline && removedSpans.length > 0) {
    const factor = result.k_hat / baseline.k_hat;
    deltaText = `removing ${removedSpans.join(", ")} multiplies k by ~${formatFactor(factor)}`;
  }
  return {
    jobId,
    includedIds: [...includedIds],
    kHat: result.k_hat,
    equation: result.equation,
    gaugePosition: gaugePosition(result.k_hat),
    deltaText,
  };
}

function formatFactor(factor: number): string {
  if (factor >= 100) return factor.toExponential(1);
  if (factor >= 10) return factor.toFixed(0);
  return factor.toFixed(1);
}

function sameSet(a: string[], b: string[]): boolean {
  if (a.length !== b.length) return false;
  const sa = new Set(a);
  return b.every((x) => sa.has(x));
}
