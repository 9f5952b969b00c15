/** Session workflow: open, accept, undo, with dating refreshed on mutation.
 *
 * Optimistic updates are disabled on purpose: state only changes when a
 * server response arrives, so the view always mirrors the server session.
 */

import { ApiClient, ApiError } from "./api.js";
import { bestOpenPosition, initialState, WorkbenchState } from "./state.js";

export class Workbench {
  state: WorkbenchState = initialState();

  constructor(
    private readonly api: ApiClient,
    private readonly onChange: (state: WorkbenchState) => void = () => {},
  ) {}

  private emit(): void {
    this.onChange(this.state);
  }

  async open(text: string, k = 10, includeUndeciphered = false): Promise<boolean> {
    this.state = initialState();
    try {
      this.state.session = await this.api.createSession({
        text,
        k,
        include_undeciphered: includeUndeciphered,
      });
      this.state.dating = await this.api.date(this.state.session.current_text);
    } catch (err) {
      this.state.error = err instanceof Error ? err.message : String(err);
      this.emit();
      return false;
    }
    this.emit();
    return true;
  }

  /**
   * Accept a form at an open masked position. Positions that are already
   * filled (or were never masked) are blocked client-side before any
   * request is made; the server would answer 409 for them.
   */
  async accept(position: number, form: string): Promise<boolean> {
    const session = this.state.session;
    if (session === null) {
      this.state.error = "no session is open";
      this.emit();
      return false;
    }
    if (!session.open_positions.includes(position)) {
      this.state.error = `position ${position} is not open for acceptance`;
      this.emit();
      return false;
    }
    try {
      this.state.session = await this.api.accept(session.session_id, position, form);
      this.state.undoDepth += 1;
      this.state.error = null;
      this.state.dating = await this.api.date(this.state.session.current_text);
    } catch (err) {
      this.state.error = err instanceof Error ? err.message : String(err);
      this.emit();
      return false;
    }
    this.emit();
    return true;
  }

  async undo(): Promise<boolean> {
    const session = this.state.session;
    if (session === null || this.state.undoDepth === 0) {
      this.state.error = "nothing to undo";
      this.emit();
      return false;
    }
    try {
      this.state.session = await this.api.undo(session.session_id);
      this.state.undoDepth -= 1;
      this.state.error = null;
      this.state.dating = await this.api.date(this.state.session.current_text);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.state.undoDepth = 0;
      }
      this.state.error = err instanceof Error ? err.message : String(err);
      this.emit();
      return false;
    }
    this.emit();
    return true;
  }

  /**
   * Accept the server's most confident top-1 candidate repeatedly until the
   * session completes; mirrors the command-line greedy decoder.
   */
  async acceptAllTopOne(): Promise<string> {
    for (;;) {
      const session = this.state.session;
      if (session === null) {
        throw new Error("no session is open");
      }
      if (session.complete) {
        return session.current_text;
      }
      const best = bestOpenPosition(session.candidates);
      const top = best?.entries[0];
      if (best === undefined || best === null || top === undefined) {
        throw new Error("session incomplete but no candidates returned");
      }
      const ok = await this.accept(best.position, top.form);
      if (!ok) {
        throw new Error(`acceptance failed: ${this.state.error ?? "unknown"}`);
      }
    }
  }
}
