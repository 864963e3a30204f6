/** Pure HTML rendering of the session state (logic stays in the controller). */

import { RankingBoard } from "./ordering.js";
import type { UiState } from "./controller.js";
import type { AnnotationTask, Criterion } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

function criteriaPanel(criteria: Criterion[]): string {
  const items = criteria
    .map(
      (c) =>
        `<li class="criterion"><strong>${escapeHtml(c.title)}</strong> ` +
        `<span>${escapeHtml(c.description)}</span></li>`,
    )
    .join("");
  return `<aside class="criteria"><h2>Ranking criteria</h2><ul>${items}</ul></aside>`;
}

function candidateCard(task: AnnotationTask, index: number, place: "bench" | "slot"): string {
  const text = task.candidates[index] ?? "";
  const turns = text
    .split("\n")
    .map((line) => `<p>${escapeHtml(line)}</p>`)
    .join("");
  const actions =
    place === "slot"
      ? `<button data-action="unplace" data-candidate="${index}">remove</button>`
      : "";
  return (
    `<article class="candidate" draggable="true" data-candidate="${index}">` +
    `<header>candidate ${index + 1}</header>${turns}${actions}</article>`
  );
}

function slotsSection(task: AnnotationTask, board: RankingBoard): string {
  const ranks = board.ranks();
  const rows = ranks
    .map((group, rank) => {
      const cards = group.map((c) => candidateCard(task, c, "slot")).join("");
      return (
        `<section class="slot" data-rank="${rank}">` +
        `<h3>rank ${rank + 1}${group.length > 1 ? " (tie)" : ""}</h3>${cards}` +
        `<button data-action="drop-tie" data-rank="${rank}">drop here as tie</button>` +
        `</section>`
      );
    })
    .join("");
  return (
    `<div class="slots">${rows}` +
    `<section class="slot new" data-rank="${ranks.length}">` +
    `<h3>new rank</h3><button data-action="drop-new" data-rank="${ranks.length}">drop here</button></section></div>`
  );
}

export function renderApp(state: UiState): string {
  switch (state.kind) {
    case "loading":
      return `<main class="loading">loading…</main>`;
    case "fatal":
      return `<main class="fatal"><p>${escapeHtml(state.message)}</p>` +
        `<button data-action="retry">retry</button></main>`;
    case "done": {
      const per = Object.entries(state.progress.per_annotator)
        .map(([who, n]) => `<li>${escapeHtml(who)}: ${n}</li>`)
        .join("");
      return (
        `<main class="done"><h1>All tasks complete</h1>` +
        `<p>${state.progress.done} of ${state.progress.total} tasks done.</p>` +
        `<ul>${per}</ul></main>`
      );
    }
    case "task": {
      const { task, board } = state;
      const banner = state.banner
        ? `<div class="banner">${escapeHtml(state.banner)} <button data-action="retry">retry</button></div>`
        : "";
      const notice = state.notice ? `<div class="notice">${escapeHtml(state.notice)}</div>` : "";
      const context = task.context
        ? `<section class="context"><h2>Question</h2><p>${escapeHtml(task.context)}</p></section>`
        : "";
      const bench = board
        .unplaced()
        .map((c) => candidateCard(task, c, "bench"))
        .join("");
      const submitDisabled = board.isComplete() && !state.submitting ? "" : "disabled";
      return (
        `<main class="task" data-task="${escapeHtml(task.task_id)}">${banner}${notice}` +
        `<header><h1>Rank the ${task.part === "question" ? "questions" : "answers"}</h1>` +
        `<img class="subject" src="${escapeHtml(task.image_uri)}" alt="task image"/></header>` +
        context +
        `<section class="bench"><h2>Unranked</h2>${bench}</section>` +
        slotsSection(task, board) +
        `<button class="submit" data-action="submit" ${submitDisabled}>submit ranking</button>` +
        criteriaPanel(state.criteria) +
        `</main>`
      );
    }
  }
}
