/** Wire shapes mirrored from the annotation service. */

export type Part = "question" | "answer";

export interface Criterion {
  key: string;
  title: string;
  description: string;
  applies_to: Part;
  multiturn_only: boolean;
}

export interface AnnotationTask {
  kind: "annotation_task";
  version: number;
  task_id: string;
  sample_id: string;
  part: Part;
  image_uri: string;
  /** Candidate texts in display order; the server owns the permutation. */
  candidates: string[];
  context: string | null;
  multiturn: boolean;
  status: string;
  claimed_by?: string | null;
  lease_expiry?: number;
  criteria: Criterion[];
}

export interface Progress {
  total: number;
  open: number;
  claimed: number;
  done: number;
  per_annotator: Record<string, number>;
}

/** Best-to-worst tie groups over display positions. */
export type TieGroupedOrder = number[][];
