/** Payload shapes of the restoration service HTTP API (schema version 1). */

export const SCHEMA_VERSION = 1;

export const DYNASTIES = [
  "Shang",
  "WesternZhou",
  "SpringAutumn",
  "WarringStates",
] as const;

export const PERIODS = ["Early", "Middle", "Late"] as const;

export interface CandidateEntry {
  form: string;
  score: number;
  family_id: number | null;
}

export interface CandidateSet {
  position: number;
  entries: CandidateEntry[];
}

export interface SessionPayload {
  schema_version: number;
  session_id: string;
  text: string;
  k: number;
  include_undeciphered: boolean;
  mask_positions: number[];
  accepted: Record<string, string>;
  open_positions: number[];
  complete: boolean;
  current_text: string;
  candidates: CandidateSet[];
}

export interface CommittedStep {
  position: number;
  form: string;
}

export interface RestorePayload {
  schema_version: number;
  mode: "parallel" | "greedy";
  text: string;
  k: number;
  mask_positions: number[];
  candidates?: CandidateSet[];
  final_text?: string;
  committed?: CommittedStep[];
  steps?: CandidateSet[];
}

export interface FamilyPair {
  token_a: string;
  token_b: string;
  era: string | null;
  source: string | null;
}

export interface FamilyPayload {
  schema_version: number;
  token: string;
  family_id: number | null;
  members: string[];
  pairs: FamilyPair[];
}

export interface DatePayload {
  schema_version: number;
  text: string;
  dynasty: Record<string, number>;
  period: Record<string, number>;
  pred_dynasty: string;
  pred_period: string;
}

export interface HealthPayload {
  schema_version: number;
  status: string;
  vocab_size: number;
  n_families: number;
  schedule: string | null;
}

export interface ErrorPayload {
  schema_version: number;
  error: string;
}
