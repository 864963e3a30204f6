/**
 * Local ranking state: candidates dragged into ordered rank slots, with any
 * slot holding several candidates as a tie group. The board can only emit a
 * payload that passes the same structural checks the server applies, so a
 * submission is never rejected for shape.
 */

import type { TieGroupedOrder } from "./types.js";

/** Mirror of the server's order validation; returns an error or null. */
export function validateOrder(order: TieGroupedOrder, candidateCount: number): string | null {
  const seen = new Set<number>();
  for (const group of order) {
    if (!Array.isArray(group) || group.length === 0) {
      return "tie groups must be non-empty";
    }
    for (const position of group) {
      if (!Number.isInteger(position) || position < 0 || position >= candidateCount) {
        return `position ${position} out of range 0..${candidateCount - 1}`;
      }
      if (seen.has(position)) {
        return `position ${position} appears twice`;
      }
      seen.add(position);
    }
  }
  if (seen.size !== candidateCount) {
    return `order covers ${seen.size} of ${candidateCount} positions`;
  }
  return null;
}

export class RankingBoard {
  private slots: number[][] = [];

  constructor(readonly candidateCount: number) {
    if (candidateCount < 2) {
      throw new Error("a ranking needs at least two candidates");
    }
  }

  /** Current slots, best first; defensive copy. */
  ranks(): TieGroupedOrder {
    return this.slots.map((group) => [...group]);
  }

  placed(): Set<number> {
    return new Set(this.slots.flat());
  }

  unplaced(): number[] {
    const placed = this.placed();
    const rest: number[] = [];
    for (let i = 0; i < this.candidateCount; i++) {
      if (!placed.has(i)) rest.push(i);
    }
    return rest;
  }

  /**
   * Place a candidate at a rank. With tie=true it joins the existing slot at
   * that rank; otherwise a new slot is inserted there (rank may equal the
   * slot count to append). The candidate is first removed from wherever it
   * was, and ranks are interpreted after that removal, clamped to bounds.
   */
  move(candidate: number, rank: number, tie = false): void {
    if (!Number.isInteger(candidate) || candidate < 0 || candidate >= this.candidateCount) {
      throw new Error(`no candidate ${candidate}`);
    }
    this.removeCandidate(candidate);
    if (tie && this.slots.length > 0) {
      const index = Math.min(Math.max(rank, 0), this.slots.length - 1);
      this.slots[index]!.push(candidate);
      this.slots[index]!.sort((a, b) => a - b);
    } else {
      const index = Math.min(Math.max(rank, 0), this.slots.length);
      this.slots.splice(index, 0, [candidate]);
    }
  }

  removeCandidate(candidate: number): void {
    this.slots = this.slots
      .map((group) => group.filter((c) => c !== candidate))
      .filter((group) => group.length > 0);
  }

  reset(): void {
    this.slots = [];
  }

  isComplete(): boolean {
    return this.placed().size === this.candidateCount;
  }

  /** Structurally valid payload, or null while candidates remain unplaced. */
  payload(): TieGroupedOrder | null {
    if (!this.isComplete()) {
      return null;
    }
    const order = this.ranks();
    const problem = validateOrder(order, this.candidateCount);
    if (problem !== null) {
      throw new Error(`internal ordering corruption: ${problem}`);
    }
    return order;
  }
}
