/** Pure HTML-string renderers; every number shown comes from an API payload. */

import { groupByFamily, WorkbenchState } from "./state.js";
import {
  DatePayload,
  DYNASTIES,
  PERIODS,
  SessionPayload,
} from "./types.js";

export function escapeHtml(value: string): string {
  return value
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export type CellKind = "identifiable" | "unreadable" | "undeciphered";

export interface DisplayCell {
  kind: CellKind;
  text: string;
}

const UNK_RE = /^\{UNK:(\d+)\}/;

/** Split inscription text into display cells: □, {UNK:n}, or one character. */
export function parseCells(text: string): DisplayCell[] {
  const cells: DisplayCell[] = [];
  let rest = text;
  while (rest.length > 0) {
    if (rest.startsWith("□")) {
      cells.push({ kind: "unreadable", text: "□" });
      rest = rest.slice(1);
      continue;
    }
    const unk = UNK_RE.exec(rest);
    if (unk !== null) {
      cells.push({ kind: "undeciphered", text: unk[0] });
      rest = rest.slice(unk[0].length);
      continue;
    }
    const ch = Array.from(rest)[0] ?? rest[0] ?? "";
    cells.push({ kind: "identifiable", text: ch });
    rest = rest.slice(ch.length);
  }
  return cells;
}

/** The inscription strip: damaged cells styled by kind, accepted cells marked. */
export function renderTokenStrip(session: SessionPayload): string {
  const cells = parseCells(session.text);
  const parts: string[] = [];
  cells.forEach((cell, position) => {
    const acceptedForm = session.accepted[String(position)];
    if (acceptedForm !== undefined) {
      parts.push(
        `<span class="cell accepted" data-position="${position}">` +
          `${escapeHtml(acceptedForm)}</span>`,
      );
      return;
    }
    parts.push(
      `<span class="cell ${cell.kind}" data-position="${position}">` +
        `${escapeHtml(cell.text)}</span>`,
    );
  });
  return `<div class="token-strip">${parts.join("")}</div>`;
}

/** Ranked candidates for every open position, grouped by glyph family. */
export function renderCandidatePanel(session: SessionPayload): string {
  if (session.candidates.length === 0) {
    return `<div class="candidate-panel"><p class="empty-state">` +
      `No open positions — nothing left to restore.</p></div>`;
  }
  const sections = session.candidates.map((cs) => {
    const groups = groupByFamily(cs.entries)
      .map((group) => {
        const label =
          group.familyId === null
            ? `<span class="family-label singleton">singleton</span>`
            : `<span class="family-label">family ${group.familyId}</span>`;
        const items = group.entries
          .map((entry, rank) => {
            const role = rank === 0 ? "candidate primary" : "candidate family-alt";
            return (
              `<button class="${role}" data-position="${cs.position}" ` +
              `data-form="${escapeHtml(entry.form)}" ` +
              `data-family="${entry.family_id ?? ""}">` +
              `<span class="form">${escapeHtml(entry.form)}</span>` +
              `<span class="score">${entry.score.toFixed(4)}</span>` +
              `</button>`
            );
          })
          .join("");
        const kind = group.familyId === null ? "family-group singleton" : "family-group";
        return `<div class="${kind}" data-key="${escapeHtml(group.key)}">${label}${items}</div>`;
      })
      .join("");
    return (
      `<section class="position-candidates" data-position="${cs.position}">` +
      `<h3>Position ${cs.position}</h3>${groups}</section>`
    );
  });
  return `<div class="candidate-panel">${sections.join("")}</div>`;
}

function renderBars(
  title: string,
  labels: readonly string[],
  values: Record<string, number>,
): string {
  const bars = labels
    .map((label) => {
      const p = values[label] ?? 0;
      const pct = (p * 100).toFixed(1);
      return (
        `<div class="bar-row" data-label="${escapeHtml(label)}">` +
        `<span class="bar-label">${escapeHtml(label)}</span>` +
        `<div class="bar" style="width:${pct}%"></div>` +
        `<span class="bar-value">${pct}%</span>` +
        `</div>`
      );
    })
    .join("");
  return `<div class="chart"><h3>${escapeHtml(title)}</h3>${bars}</div>`;
}

/** Dynasty and period probability bars, straight from one /date response. */
export function renderDatingPanel(date: DatePayload): string {
  return (
    `<div class="dating-panel">` +
    renderBars("Dynasty", DYNASTIES, date.dynasty) +
    renderBars("Period", PERIODS, date.period) +
    `<p class="prediction">Predicted: ${escapeHtml(date.pred_dynasty)}` +
    ` / ${escapeHtml(date.pred_period)}</p>` +
    `</div>`
  );
}

export function renderBanner(session: SessionPayload): string {
  if (!session.complete) {
    return "";
  }
  return (
    `<div class="banner complete">Restoration complete: ` +
    `<span class="final-text">${escapeHtml(session.current_text)}</span></div>`
  );
}

export function renderError(error: string | null): string {
  if (error === null) {
    return "";
  }
  return `<div class="error-box">${escapeHtml(error)}</div>`;
}

/** The whole workbench view as one HTML string. */
export function renderPage(state: WorkbenchState): string {
  if (state.session === null) {
    return `<div class="workbench empty"><p class="empty-state">` +
      `Load an inscription to begin.</p>${renderError(state.error)}</div>`;
  }
  const dating = state.dating === null ? "" : renderDatingPanel(state.dating);
  return (
    `<div class="workbench">` +
    renderError(state.error) +
    renderBanner(state.session) +
    renderTokenStrip(state.session) +
    renderCandidatePanel(state.session) +
    dating +
    `<p class="undo-depth">Undo depth: ${state.undoDepth}</p>` +
    `</div>`
  );
}
