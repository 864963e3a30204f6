/** Browser bootstrap: wires DOM events to the controller and re-renders. */

import { ApiClient } from "./api.js";
import { AnnotatorApp } from "./controller.js";
import { renderApp } from "./render.js";

function annotatorId(): string {
  const params = new URLSearchParams(window.location.search);
  const fromUrl = params.get("annotator");
  if (fromUrl) {
    window.localStorage.setItem("annotator_id", fromUrl);
    return fromUrl;
  }
  const stored = window.localStorage.getItem("annotator_id");
  if (stored) {
    return stored;
  }
  const generated = `annotator-${Math.random().toString(36).slice(2, 8)}`;
  window.localStorage.setItem("annotator_id", generated);
  return generated;
}

export function mount(root: HTMLElement): AnnotatorApp {
  const app = new AnnotatorApp(new ApiClient(""), annotatorId(), {
    render(state) {
      root.innerHTML = renderApp(state);
    },
  });

  let dragged: number | null = null;

  root.addEventListener("dragstart", (event) => {
    const card = (event.target as HTMLElement).closest<HTMLElement>("[data-candidate]");
    dragged = card ? Number(card.dataset.candidate) : null;
  });

  root.addEventListener("dragover", (event) => {
    if ((event.target as HTMLElement).closest("[data-rank]")) {
      event.preventDefault();
    }
  });

  root.addEventListener("drop", (event) => {
    const slot = (event.target as HTMLElement).closest<HTMLElement>("[data-rank]");
    if (slot && dragged !== null) {
      event.preventDefault();
      const rank = Number(slot.dataset.rank);
      const tie = !slot.classList.contains("new") && slot.querySelector("[data-candidate]") !== null;
      app.move(dragged, rank, tie);
      dragged = null;
    }
  });

  root.addEventListener("click", (event) => {
    const button = (event.target as HTMLElement).closest<HTMLElement>("[data-action]");
    if (!button) {
      return;
    }
    const action = button.dataset.action;
    if (action === "submit") {
      void app.submit();
    } else if (action === "retry") {
      void app.retry();
    } else if (action === "unplace") {
      app.unplace(Number(button.dataset.candidate));
    } else if (action === "drop-tie" && dragged !== null) {
      app.move(dragged, Number(button.dataset.rank), true);
      dragged = null;
    } else if (action === "drop-new" && dragged !== null) {
      app.move(dragged, Number(button.dataset.rank), false);
      dragged = null;
    }
  });

  void app.start();
  return app;
}

const rootElement = typeof document !== "undefined" ? document.getElementById("app") : null;
if (rootElement) {
  mount(rootElement);
}
