/** DOM bootstrap: the only module that touches the document. */

import { ApiClient } from "./api.js";
import { Workbench } from "./controller.js";
import { renderPage } from "./render.js";

declare global {
  interface Window {
    GLYPHMLM_API_BASE?: string;
  }
}

function apiBase(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("api");
  return fromQuery ?? window.GLYPHMLM_API_BASE ?? "http://127.0.0.1:8077";
}

function start(): void {
  const root = document.getElementById("workbench-root");
  const textInput = document.getElementById("inscription-input") as HTMLInputElement | null;
  const kInput = document.getElementById("k-input") as HTMLInputElement | null;
  const unkToggle = document.getElementById("unk-toggle") as HTMLInputElement | null;
  const openButton = document.getElementById("open-button");
  const undoButton = document.getElementById("undo-button");
  if (!root || !textInput || !kInput || !openButton || !undoButton) {
    throw new Error("workbench markup is incomplete");
  }
  const workbench = new Workbench(new ApiClient(apiBase()), (state) => {
    root.innerHTML = renderPage(state);
  });
  root.innerHTML = renderPage(workbench.state);

  openButton.addEventListener("click", () => {
    const k = Number.parseInt(kInput.value, 10);
    void workbench.open(
      textInput.value,
      Number.isFinite(k) && k >= 1 ? k : 10,
      unkToggle?.checked ?? false,
    );
  });
  undoButton.addEventListener("click", () => {
    void workbench.undo();
  });
  root.addEventListener("click", (event) => {
    const target = (event.target as HTMLElement | null)?.closest?.(
      "button.candidate",
    ) as HTMLElement | null;
    if (!target) {
      return;
    }
    const position = Number.parseInt(target.dataset.position ?? "", 10);
    const form = target.dataset.form ?? "";
    if (Number.isFinite(position) && form !== "") {
      void workbench.accept(position, form);
    }
  });
}

document.addEventListener("DOMContentLoaded", start);
