/**
 * Annotator session state machine. All transitions are async-safe around a
 * single in-flight request; views observe immutable state snapshots.
 */

import { ApiClient } from "./api.js";
import { RankingBoard } from "./ordering.js";
import type { AnnotationTask, Criterion, Progress } from "./types.js";

export type UiState =
  | { kind: "loading" }
  | {
      kind: "task";
      task: AnnotationTask;
      board: RankingBoard;
      criteria: Criterion[];
      notice: string | null;
      banner: string | null;
      submitting: boolean;
    }
  | { kind: "done"; progress: Progress }
  | { kind: "fatal"; message: string };

export interface View {
  render(state: UiState): void;
}

type PendingAction = "next" | "submit" | null;

export class AnnotatorApp {
  state: UiState = { kind: "loading" };
  private criteria: Criterion[] = [];
  private pendingRetry: PendingAction = null;
  private pendingNotice: string | null = null;

  constructor(
    private readonly api: ApiClient,
    readonly annotatorId: string,
    private readonly view: View,
  ) {}

  private setState(state: UiState): void {
    this.state = state;
    this.view.render(state);
  }

  /** Criteria applicable to the current task, straight from the service. */
  criteriaFor(task: AnnotationTask): Criterion[] {
    const pool = task.criteria.length > 0 ? task.criteria : this.criteria;
    return pool.filter(
      (c) => c.applies_to === task.part && (!c.multiturn_only || task.multiturn),
    );
  }

  async start(): Promise<void> {
    this.setState({ kind: "loading" });
    try {
      this.criteria = await this.api.criteria();
    } catch (err) {
      this.setState({ kind: "fatal", message: `cannot reach the annotation service: ${String(err)}` });
      return;
    }
    await this.next();
  }

  async next(): Promise<void> {
    try {
      const task = await this.api.nextTask(this.annotatorId);
      if (task === null) {
        const progress = await this.api.progress();
        this.setState({ kind: "done", progress });
        return;
      }
      this.setState({
        kind: "task",
        task,
        board: new RankingBoard(task.candidates.length),
        criteria: this.criteriaFor(task),
        notice: this.pendingNotice,
        banner: null,
        submitting: false,
      });
      this.pendingNotice = null;
      this.pendingRetry = null;
    } catch (err) {
      this.pendingRetry = "next";
      this.showBanner(`connection problem: ${String(err)}`);
    }
  }

  /** Drag a candidate into a rank slot (tie=true joins the slot). */
  move(candidate: number, rank: number, tie = false): void {
    if (this.state.kind !== "task" || this.state.submitting) {
      return;
    }
    this.state.board.move(candidate, rank, tie);
    this.setState({ ...this.state, notice: null });
  }

  unplace(candidate: number): void {
    if (this.state.kind !== "task" || this.state.submitting) {
      return;
    }
    this.state.board.removeCandidate(candidate);
    this.setState({ ...this.state });
  }

  canSubmit(): boolean {
    return this.state.kind === "task" && !this.state.submitting && this.state.board.isComplete();
  }

  async submit(): Promise<void> {
    if (this.state.kind !== "task") {
      return;
    }
    const order = this.state.board.payload();
    if (order === null) {
      this.setState({ ...this.state, notice: "place every candidate before submitting" });
      return;
    }
    this.setState({ ...this.state, submitting: true, banner: null });
    let result;
    try {
      result = await this.api.submitRanking(this.state.task.task_id, this.annotatorId, order);
    } catch (err) {
      // local order survives a network failure; the banner offers a retry
      this.pendingRetry = "submit";
      this.setState({ ...this.state, submitting: false });
      this.showBanner(`connection problem: ${String(err)}`);
      return;
    }
    if (result.ok) {
      await this.next();
      return;
    }
    if (result.error === "stale_claim") {
      // someone else finished it or the lease lapsed; move on with a notice
      this.pendingNotice = "your claim on the previous task expired; here is a fresh one";
      await this.next();
      return;
    }
    this.setState({ ...this.state, submitting: false, notice: `submission rejected: ${result.detail}` });
  }

  async retry(): Promise<void> {
    const action = this.pendingRetry;
    this.pendingRetry = null;
    if (action === "submit") {
      await this.submit();
    } else if (action === "next") {
      await this.next();
    }
  }

  private showBanner(message: string): void {
    if (this.state.kind === "task") {
      this.setState({ ...this.state, banner: message });
    } else {
      this.setState({ kind: "fatal", message });
    }
  }
}
