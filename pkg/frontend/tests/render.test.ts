import { describe, expect, it } from "vitest";

import { bestOpenPosition, groupByFamily, initialState } from "../src/state";
import {
  parseCells,
  renderBanner,
  renderCandidatePanel,
  renderDatingPanel,
  renderPage,
  renderTokenStrip,
} from "../src/render";
import {
  CandidateEntry,
  CandidateSet,
  DatePayload,
  SessionPayload,
  SCHEMA_VERSION,
} from "../src/types";

function entry(form: string, score: number, family_id: number | null): CandidateEntry {
  return { form, score, family_id };
}

const FIVE_CANDIDATES = [
  entry("甲", -0.1, 7),
  entry("乙", -0.5, null),
  entry("丙", -0.9, 7),
  entry("丁", -1.3, 3),
  entry("戊", -1.7, null),
];

function session(overrides: Partial<SessionPayload> = {}): SessionPayload {
  return {
    schema_version: SCHEMA_VERSION,
    session_id: "s1",
    text: "王□于□",
    k: 5,
    include_undeciphered: false,
    mask_positions: [1, 3],
    accepted: {},
    open_positions: [1, 3],
    complete: false,
    current_text: "王□于□",
    candidates: [
      { position: 1, entries: FIVE_CANDIDATES },
      { position: 3, entries: [entry("甲", -0.2, 7), entry("丁", -0.4, 3)] },
    ],
    ...overrides,
  };
}

describe("family grouping", () => {
  it("merges candidates sharing a family into one visual group", () => {
    const groups = groupByFamily(FIVE_CANDIDATES);
    // 甲 and 丙 share family 7: five candidates render as four groups.
    expect(groups).toHaveLength(4);
    const shared = groups.find((g) => g.familyId === 7);
    expect(shared).toBeDefined();
    expect(shared!.entries.map((e) => e.form)).toEqual(["甲", "丙"]);
    expect(groups.filter((g) => g.familyId === null)).toHaveLength(2);
  });

  it("places each group at the rank of its best entry", () => {
    const groups = groupByFamily(FIVE_CANDIDATES);
    expect(groups.map((g) => g.entries[0]!.form)).toEqual(["甲", "乙", "丁", "戊"]);
  });

  it("keeps disjoint families in separate groups", () => {
    const groups = groupByFamily([
      entry("a", -0.1, 1),
      entry("b", -0.2, 2),
      entry("c", -0.3, 1),
      entry("d", -0.4, 2),
    ]);
    expect(groups).toHaveLength(2);
    expect(groups.map((g) => g.key)).toEqual(["family:1", "family:2"]);
    expect(groups.map((g) => g.entries.length)).toEqual([2, 2]);
  });
});

describe("token strip", () => {
  it("classifies unreadable and undeciphered cells differently", () => {
    const cells = parseCells("王□{UNK:12}于");
    expect(cells.map((c) => c.kind)).toEqual([
      "identifiable",
      "unreadable",
      "undeciphered",
      "identifiable",
    ]);
    expect(cells.map((c) => c.text)).toEqual(["王", "□", "{UNK:12}", "于"]);
  });

  it("styles the two damage kinds with distinct classes", () => {
    const html = renderTokenStrip(session({ text: "王□{UNK:12}于" }));
    expect(html).toContain('class="cell unreadable"');
    expect(html).toContain('class="cell undeciphered"');
  });

  it("marks accepted positions and shows the accepted form", () => {
    const html = renderTokenStrip(
      session({ text: "王□于", accepted: { "1": "帝" } }),
    );
    expect(html).toContain('class="cell accepted" data-position="1"');
    expect(html).toContain("帝");
    expect(html).not.toContain('class="cell unreadable"');
  });

  it("keeps surrogate-pair characters as single cells", () => {
    const cells = parseCells("𠀀□");
    expect(cells).toHaveLength(2);
    expect(cells[0]!.text).toBe("𠀀");
    expect(cells[1]!.kind).toBe("unreadable");
  });

  it("escapes HTML in token text", () => {
    const html = renderTokenStrip(session({ text: "<b>□" }));
    expect(html).not.toContain("<b>");
    expect(html).toContain("&lt;");
  });
});

describe("candidate panel", () => {
  it("shows an empty state when there is nothing left to restore", () => {
    const html = renderCandidatePanel(session({ candidates: [] }));
    expect(html).toContain("empty-state");
    expect(html).toContain("nothing left to restore");
  });

  it("renders one section per open position", () => {
    const html = renderCandidatePanel(session());
    expect(html.match(/class="position-candidates"/g)).toHaveLength(2);
    expect(html).toContain("Position 1");
    expect(html).toContain("Position 3");
  });

  it("draws family groups and singleton groups with distinct classes", () => {
    const html = renderCandidatePanel(
      session({ candidates: [{ position: 1, entries: FIVE_CANDIDATES }] }),
    );
    expect(html.match(/class="family-group"/g)).toHaveLength(2);
    expect(html.match(/class="family-group singleton"/g)).toHaveLength(2);
    expect(html).toContain("family 7");
    expect(html).toContain("family 3");
    expect(html).toContain(">singleton<");
  });

  it("distinguishes the primary candidate from family alternates", () => {
    const html = renderCandidatePanel(
      session({ candidates: [{ position: 1, entries: FIVE_CANDIDATES }] }),
    );
    expect(/class="candidate primary"[^>]*data-form="甲"/.test(html)).toBe(true);
    expect(/class="candidate family-alt"[^>]*data-form="丙"/.test(html)).toBe(true);
    // Singleton groups have only a primary, never an alternate.
    expect(/class="candidate family-alt"[^>]*data-form="乙"/.test(html)).toBe(false);
  });

  it("shows each candidate's score exactly as fixed-precision payload data", () => {
    const html = renderCandidatePanel(
      session({ candidates: [{ position: 1, entries: FIVE_CANDIDATES }] }),
    );
    for (const e of FIVE_CANDIDATES) {
      expect(html).toContain(`<span class="score">${e.score.toFixed(4)}</span>`);
    }
  });

  it("wires every candidate button to its position and form", () => {
    const html = renderCandidatePanel(session());
    expect(/data-position="3"[^>]*data-form="甲"/.test(html)).toBe(true);
    expect(/data-position="1"[^>]*data-form="戊"/.test(html)).toBe(true);
  });
});

describe("dating panel", () => {
  const dating: DatePayload = {
    schema_version: SCHEMA_VERSION,
    text: "王于",
    dynasty: { Shang: 0.62, WesternZhou: 0.2, SpringAutumn: 0.1, WarringStates: 0.08 },
    period: { Early: 0.5, Middle: 0.3, Late: 0.2 },
    pred_dynasty: "Shang",
    pred_period: "Early",
  };

  it("renders four dynasty bars and three period bars", () => {
    const html = renderDatingPanel(dating);
    expect(html.match(/class="bar-row"/g)).toHaveLength(7);
    for (const name of [
      "Shang",
      "WesternZhou",
      "SpringAutumn",
      "WarringStates",
      "Early",
      "Middle",
      "Late",
    ]) {
      expect(html).toContain(`data-label="${name}"`);
    }
  });

  it("shows percentages that come straight from the probabilities", () => {
    const html = renderDatingPanel(dating);
    expect(html).toContain(">62.0%<");
    expect(html).toContain(">8.0%<");
    expect(html).toContain(">50.0%<");
    const shown = [...html.matchAll(/>([\d.]+)%</g)].map((m) => Number(m[1]));
    expect(shown).toHaveLength(7);
    const dynastySum = shown.slice(0, 4).reduce((a, b) => a + b, 0);
    const periodSum = shown.slice(4).reduce((a, b) => a + b, 0);
    expect(Math.abs(dynastySum - 100)).toBeLessThan(0.2);
    expect(Math.abs(periodSum - 100)).toBeLessThan(0.2);
  });

  it("names the predicted dynasty and period", () => {
    const html = renderDatingPanel(dating);
    expect(html).toContain("Predicted: Shang / Early");
  });
});

describe("page composition", () => {
  it("announces completion with the restored text", () => {
    const done = session({
      accepted: { "1": "帝", "3": "王" },
      open_positions: [],
      complete: true,
      current_text: "王帝于王",
      candidates: [],
    });
    const html = renderBanner(done);
    expect(html).toContain('class="banner complete"');
    expect(html).toContain("王帝于王");
    expect(renderBanner(session())).toBe("");
  });

  it("renders an empty workbench before any session is opened", () => {
    const html = renderPage(initialState());
    expect(html).toContain("Load an inscription to begin.");
  });

  it("every number on screen traces back to an API payload", () => {
    const payload = session();
    const html = renderPage({
      session: payload,
      dating: null,
      undoDepth: 0,
      error: null,
    });
    const allowed = new Set<string>();
    for (const cs of payload.candidates) {
      for (const e of cs.entries) {
        allowed.add(e.score.toFixed(4));
      }
    }
    const numbers = [...html.matchAll(/>\s*(-?\d+(?:\.\d+)?)\s*</g)].map(
      (m) => m[1]!,
    );
    expect(numbers.length).toBeGreaterThan(0);
    for (const n of numbers) {
      expect(allowed.has(n), `rendered number ${n} has no payload source`).toBe(
        true,
      );
    }
  });
});

describe("best open position", () => {
  it("prefers the highest top-1 score", () => {
    const sets: CandidateSet[] = [
      { position: 2, entries: [entry("a", -0.5, null)] },
      { position: 4, entries: [entry("b", -0.3, null)] },
    ];
    expect(bestOpenPosition(sets)!.position).toBe(4);
  });

  it("breaks exact ties by the smaller position", () => {
    const sets: CandidateSet[] = [
      { position: 4, entries: [entry("a", -0.5, null)] },
      { position: 2, entries: [entry("b", -0.3, null)] },
      { position: 6, entries: [entry("c", -0.3, null)] },
    ];
    expect(bestOpenPosition(sets)!.position).toBe(2);
  });

  it("returns null when no candidates remain", () => {
    expect(bestOpenPosition([])).toBeNull();
  });
});
