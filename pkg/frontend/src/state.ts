/** Client-side view state: a mirror of the server session plus panel data.
 *
 * Nothing here computes model quantities; helpers only regroup and order
 * values that arrived in API payloads.
 */

import {
  CandidateEntry,
  CandidateSet,
  DatePayload,
  SessionPayload,
} from "./types.js";

export interface WorkbenchState {
  session: SessionPayload | null;
  dating: DatePayload | null;
  undoDepth: number;
  error: string | null;
}

export function initialState(): WorkbenchState {
  return { session: null, dating: null, undoDepth: 0, error: null };
}

/** One visual group of the candidate panel: a glyph family or a singleton. */
export interface FamilyGroup {
  key: string;
  familyId: number | null;
  entries: CandidateEntry[];
}

/**
 * Group candidates that share a family id, preserving score order: each
 * group sits at the rank of its best entry, singletons stand alone.
 */
export function groupByFamily(entries: CandidateEntry[]): FamilyGroup[] {
  const groups: FamilyGroup[] = [];
  const byFamily = new Map<number, FamilyGroup>();
  for (const entry of entries) {
    if (entry.family_id === null) {
      groups.push({ key: `solo:${entry.form}`, familyId: null, entries: [entry] });
      continue;
    }
    const existing = byFamily.get(entry.family_id);
    if (existing) {
      existing.entries.push(entry);
    } else {
      const group: FamilyGroup = {
        key: `family:${entry.family_id}`,
        familyId: entry.family_id,
        entries: [entry],
      };
      byFamily.set(entry.family_id, group);
      groups.push(group);
    }
  }
  return groups;
}

/**
 * The open position whose top candidate the server scored highest;
 * exact ties fall to the smallest position (the greedy decoder's rule).
 */
export function bestOpenPosition(sets: readonly CandidateSet[]): CandidateSet | null {
  let best: CandidateSet | null = null;
  for (const cs of sets) {
    const top = cs.entries[0];
    if (top === undefined) {
      continue;
    }
    const bestTop = best?.entries[0];
    if (
      bestTop === undefined ||
      top.score > bestTop.score ||
      (top.score === bestTop.score && best !== null && cs.position < best.position)
    ) {
      best = cs;
    }
  }
  return best;
}

/** Canonical serialization for snapshot comparisons in tests. */
export function snapshotOf(state: WorkbenchState): string {
  return JSON.stringify({
    session: state.session,
    dating: state.dating,
    undoDepth: state.undoDepth,
  });
}
