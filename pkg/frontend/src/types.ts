/** Payload shapes of the estimation service. The UI never computes k itself:
 * every number on screen comes from one of these fields. */

export type Category =
  | "location"
  | "age"
  | "relationship_status"
  | "gender"
  | "pet"
  | "appearance"
  | "race_nationality"
  | "sexual_orientation"
  | "health"
  | "family"
  | "occupation"
  | "mental_health"
  | "emotions"
  | "reproductive_health"
  | "finance"
  | "education"
  | "crime"
  | "events"
  | "other_people"
  | "pii";

export const CATEGORIES: Category[] = [
  "location",
  "age",
  "relationship_status",
  "gender",
  "pet",
  "appearance",
  "race_nationality",
  "sexual_orientation",
  "health",
  "family",
  "occupation",
  "mental_health",
  "emotions",
  "reproductive_health",
  "finance",
  "education",
  "crime",
  "events",
  "other_people",
  "pii",
];

export interface DisclosurePayload {
  id: string;
  span: string;
  category: string;
}

export interface QueryPayload {
  target: string;
  kind: "population" | "percentage";
  text: string;
  subqueries: QueryPayload[];
  combine: string | null;
  answer: number | null;
  confidence: number | null;
  simplified: boolean;
}

export interface ResultPayload {
  k_hat: number;
  raw_k: number;
  equation: string;
  order: string[];
  parents: Record<string, string[]>;
  queries: QueryPayload[];
  transcript?: TranscriptEntry[];
}

export interface TranscriptEntry {
  stage: string;
  retries: number;
}

export interface JobSnapshot {
  job_id: string;
  state: "queued" | "running" | "done" | "failed";
  stages: TranscriptEntry[];
  result: ResultPayload | null;
  error: string | null;
  parent_job_id?: string;
}

export interface EstimateRequest {
  document: { id?: string; text: string; community?: string | null };
  disclosures: DisclosurePayload[];
  config?: Record<string, unknown>;
}
