"""HTTP annotation service: dispatches ranking tasks and persists rankings.

Tasks are claimed with expiring leases so a stalled annotator never blocks a
sample; submitted rankings are unmapped from the per-task display
permutation back to canonical candidate indices and appended to a log that
rebuilds the exact service state on restart. No external database: the task
table lives in memory, guarded by one lock, and the ranking log is the
source of truth.
"""

from __future__ import annotations

import json
import random
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from .corpus import AnswerSample, Part, QuestionSample, Ranking, save_corpus
from .errors import SchemaError, VistructError
from .prefs import QUESTION_GROUP_JOINER, expand_multiturn

TASK_VERSION = 1
DEFAULT_LEASE_SECONDS = 30 * 60


@dataclass(frozen=True)
class CriterionSpec:
    key: str
    title: str
    description: str
    applies_to: Part
    multiturn_only: bool = False

    def to_obj(self) -> dict:
        return {
            "key": self.key,
            "title": self.title,
            "description": self.description,
            "applies_to": self.applies_to.value,
            "multiturn_only": self.multiturn_only,
        }


QUESTION_CRITERIA = (
    CriterionSpec(
        "correctness",
        "Correctness",
        "Prefer questions consistent with the image content and world knowledge; "
        "penalize inaccuracies, contradictions, or illogical statements.",
        Part.QUESTION,
    ),
    CriterionSpec(
        "fluency",
        "Fluency",
        "Prefer grammatical, clear, coherent questions; ambiguous or poorly "
        "structured phrasing ranks lower.",
        Part.QUESTION,
    ),
    CriterionSpec(
        "relevance",
        "Relevance",
        "Prefer questions that genuinely depend on the image and are answerable "
        "from it; penalize questions answerable without looking, or that leak "
        "image details.",
        Part.QUESTION,
    ),
    CriterionSpec(
        "question_distribution",
        "Question distribution",
        "Across the turns of a conversation, prefer varied difficulty and subject "
        "matter over repetitive or redundant questions.",
        Part.QUESTION,
        multiturn_only=True,
    ),
)

ANSWER_CRITERIA = (
    CriterionSpec(
        "accuracy",
        "Accuracy",
        "Prefer answers consistent with the image and general knowledge; factual "
        "errors or contradictions rank lower.",
        Part.ANSWER,
    ),
    CriterionSpec(
        "completeness",
        "Completeness",
        "Prefer exhaustive answers that use the relevant image detail available.",
        Part.ANSWER,
    ),
    CriterionSpec(
        "reasoning",
        "Reasoning",
        "Where deduction is needed, prefer clear and correct step-by-step "
        "reasoning.",
        Part.ANSWER,
    ),
    CriterionSpec(
        "relevance",
        "Relevance",
        "Prefer answers focused on the question, without extraneous content.",
        Part.ANSWER,
    ),
)

ALL_CRITERIA = QUESTION_CRITERIA + ANSWER_CRITERIA

STATUS_OPEN = "open"
STATUS_CLAIMED = "claimed"
STATUS_DONE = "done"


class StaleClaimError(VistructError):
    """Task not claimed by this annotator, or the lease expired."""


class OrderError(VistructError):
    """Submitted order is not a tie-grouped permutation of the positions."""


@dataclass
class AnnotationTask:
    """One ranking assignment over a sample's candidates.

    ``candidates`` is in display order; ``permutation[display_pos]`` is the
    canonical candidate index, recorded so submissions map back before
    persistence. Display order is randomized per task to suppress position
    bias.
    """

    task_id: str
    sample_id: str
    part: Part
    image_uri: str
    candidates: list[str]
    permutation: list[int]
    context: str | None = None
    multiturn: bool = False
    status: str = STATUS_OPEN
    claimed_by: str | None = None
    lease_expiry: float = 0.0
    done_by: str | None = None

    def criteria(self) -> list[CriterionSpec]:
        pool = QUESTION_CRITERIA if self.part is Part.QUESTION else ANSWER_CRITERIA
        return [c for c in pool if not c.multiturn_only or self.multiturn]

    def effective_status(self, now: float) -> str:
        if self.status == STATUS_CLAIMED and self.lease_expiry <= now:
            return STATUS_OPEN
        return self.status

    def to_store_obj(self) -> dict:
        return {
            "kind": "annotation_task",
            "version": TASK_VERSION,
            "task_id": self.task_id,
            "sample_id": self.sample_id,
            "part": self.part.value,
            "image_uri": self.image_uri,
            "candidates": list(self.candidates),
            "permutation": list(self.permutation),
            "context": self.context,
            "multiturn": self.multiturn,
        }

    def to_wire_obj(self, now: float) -> dict:
        # The permutation stays server-side; annotators rank display positions.
        return {
            "kind": "annotation_task",
            "version": TASK_VERSION,
            "task_id": self.task_id,
            "sample_id": self.sample_id,
            "part": self.part.value,
            "image_uri": self.image_uri,
            "candidates": list(self.candidates),
            "context": self.context,
            "multiturn": self.multiturn,
            "status": self.effective_status(now),
            "claimed_by": self.claimed_by if self.effective_status(now) == STATUS_CLAIMED else None,
            "lease_expiry": self.lease_expiry,
            "criteria": [c.to_obj() for c in self.criteria()],
        }

    @classmethod
    def from_store_obj(cls, obj: dict) -> "AnnotationTask":
        return cls(
            task_id=obj["task_id"],
            sample_id=obj["sample_id"],
            part=Part(obj["part"]),
            image_uri=obj.get("image_uri", ""),
            candidates=list(obj["candidates"]),
            permutation=list(obj["permutation"]),
            context=obj.get("context"),
            multiturn=bool(obj.get("multiturn")),
        )


def map_submitted_order(order: list[list[int]], permutation: list[int]) -> list[list[int]]:
    """Convert tie-groups over display positions to canonical indices."""
    n = len(permutation)
    seen: set[int] = set()
    canonical: list[list[int]] = []
    for group in order:
        if not isinstance(group, list) or not group:
            raise OrderError("tie-groups must be non-empty lists")
        mapped = []
        for pos in group:
            if not isinstance(pos, int) or not 0 <= pos < n:
                raise OrderError(f"position {pos!r} out of range 0..{n - 1}")
            if pos in seen:
                raise OrderError(f"position {pos} appears twice")
            seen.add(pos)
            mapped.append(permutation[pos])
        canonical.append(sorted(mapped))
    if len(seen) != n:
        raise OrderError(f"order covers {len(seen)} of {n} positions")
    return canonical


class TaskStore:
    """Linearizable task table backed by append-only files.

    ``tasks.jsonl`` fixes the task set and display permutations;
    ``rankings.jsonl`` accumulates submissions. Replaying both reconstructs
    identical state after a crash: a task is done iff a ranking for its
    sample/part exists. Claims are leases and deliberately not persisted.
    """

    def __init__(
        self,
        data_dir: str | Path,
        lease_seconds: float = DEFAULT_LEASE_SECONDS,
        seed: int = 0,
        clock: Callable[[], float] = time.time,
    ):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.lease_seconds = lease_seconds
        self.seed = seed
        self.clock = clock
        self._lock = threading.RLock()
        self._tasks: dict[str, AnnotationTask] = {}
        self._rankings: dict[tuple[str, str, str], Ranking] = {}
        self._tasks_path = self.data_dir / "tasks.jsonl"
        self._rankings_path = self.data_dir / "rankings.jsonl"
        self._load()

    # -- construction ------------------------------------------------------

    def _load(self) -> None:
        if self._tasks_path.exists():
            with self._tasks_path.open("r", encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    task = AnnotationTask.from_store_obj(json.loads(line))
                    self._tasks[task.task_id] = task
        if self._rankings_path.exists():
            with self._rankings_path.open("r", encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    ranking = Ranking.from_obj(json.loads(line))
                    self._index_ranking(ranking)

    def _index_ranking(self, ranking: Ranking) -> None:
        key = (ranking.sample_id, ranking.part.value, ranking.annotator_id)
        self._rankings[key] = ranking
        task = self._task_for(ranking.sample_id, ranking.part)
        if task is not None:
            task.status = STATUS_DONE
            task.done_by = ranking.annotator_id
            task.claimed_by = None

    def _task_for(self, sample_id: str, part: Part) -> AnnotationTask | None:
        return self._tasks.get(_task_id(sample_id, part))

    def load_samples(
        self,
        question_samples: list[QuestionSample] = (),
        answer_samples: list[AnswerSample] = (),
    ) -> int:
        """Create tasks for the given samples (idempotent per sample).

        Multi-turn answer samples are decomposed into per-turn tasks, since
        answers are judged per turn while question groups are judged whole.
        """
        created = 0
        with self._lock:
            for sample in question_samples:
                sample.validate()
                created += self._add_task(
                    sample_id=sample.id,
                    part=Part.QUESTION,
                    image_uri=sample.image.uri,
                    texts=sample.group_texts(QUESTION_GROUP_JOINER),
                    context=None,
                    multiturn=any(len(g) > 1 for g in sample.candidates),
                )
            for sample in answer_samples:
                sample.validate()
                for expanded in expand_multiturn(sample):
                    created += self._add_task(
                        sample_id=expanded.id,
                        part=Part.ANSWER,
                        image_uri=expanded.image.uri,
                        texts=list(expanded.candidates),
                        context=expanded.seed_question,
                        multiturn=False,
                    )
        return created

    def _add_task(
        self,
        sample_id: str,
        part: Part,
        image_uri: str,
        texts: list[str],
        context: str | None,
        multiturn: bool,
    ) -> int:
        task_id = _task_id(sample_id, part)
        if task_id in self._tasks:
            return 0
        if len(texts) < 2:
            raise SchemaError(f"task {task_id!r} needs at least 2 candidates", field="candidates")
        rng = random.Random(f"{self.seed}:{task_id}")
        permutation = list(range(len(texts)))
        rng.shuffle(permutation)
        task = AnnotationTask(
            task_id=task_id,
            sample_id=sample_id,
            part=part,
            image_uri=image_uri,
            candidates=[texts[c] for c in permutation],
            permutation=permutation,
            context=context,
            multiturn=multiturn,
        )
        self._tasks[task_id] = task
        with self._tasks_path.open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(task.to_store_obj(), separators=(",", ":"), ensure_ascii=False) + "\n")
        # A ranking may already exist if tasks were rebuilt after a crash.
        for (sample, part_value, _), _ranking in self._rankings.items():
            if sample == sample_id and part_value == part.value:
                task.status = STATUS_DONE
        return 1

    # -- dispatch ----------------------------------------------------------

    def next_task(self, annotator_id: str) -> AnnotationTask | None:
        """Claim and return the next open task for this annotator.

        Re-polling while holding a live claim returns the same task. Expired
        leases silently reopen. Returns None when nothing is available.
        """
        if not annotator_id:
            raise VistructError("annotator_id is required")
        with self._lock:
            now = self.clock()
            for task in self._tasks.values():
                if (
                    task.status == STATUS_CLAIMED
                    and task.claimed_by == annotator_id
                    and task.lease_expiry > now
                ):
                    return task
            for task in self._tasks.values():
                if task.effective_status(now) != STATUS_OPEN:
                    continue
                if (task.sample_id, task.part.value, annotator_id) in self._rankings:
                    continue
                task.status = STATUS_CLAIMED
                task.claimed_by = annotator_id
                task.lease_expiry = now + self.lease_seconds
                return task
        return None

    def submit_ranking(
        self,
        task_id: str,
        annotator_id: str,
        order: list[list[int]],
    ) -> Ranking:
        """Validate, canonicalize, and persist one ranking; mark the task done.

        Submitting the identical payload twice is idempotent; a conflicting
        payload or a lapsed claim raises StaleClaimError.
        """
        with self._lock:
            task = self._tasks.get(task_id)
            if task is None:
                raise KeyError(task_id)
            canonical_order = map_submitted_order(order, task.permutation)
            key = (task.sample_id, task.part.value, annotator_id)
            existing = self._rankings.get(key)
            if existing is not None:
                if [sorted(g) for g in existing.order] == canonical_order:
                    return existing
                raise StaleClaimError(f"task {task_id} already submitted with a different order")
            now = self.clock()
            if task.status == STATUS_DONE:
                raise StaleClaimError(f"task {task_id} is already done")
            if task.claimed_by != annotator_id or task.lease_expiry <= now:
                raise StaleClaimError(f"task {task_id} is not claimed by {annotator_id}")
            ranking = Ranking(
                sample_id=task.sample_id,
                part=task.part,
                order=canonical_order,
                annotator_id=annotator_id,
                created_at=datetime.fromtimestamp(now, tz=timezone.utc).isoformat(timespec="seconds"),
            )
            ranking.validate()
            with self._rankings_path.open("a", encoding="utf-8") as handle:
                handle.write(json.dumps(ranking.to_obj(), separators=(",", ":"), ensure_ascii=False) + "\n")
                handle.flush()
            self._rankings[key] = ranking
            task.status = STATUS_DONE
            task.done_by = annotator_id
            task.claimed_by = None
            return ranking

    # -- reporting ---------------------------------------------------------

    def get_task(self, task_id: str) -> AnnotationTask | None:
        with self._lock:
            return self._tasks.get(task_id)

    def progress(self) -> dict:
        with self._lock:
            now = self.clock()
            counts = {"total": len(self._tasks), "open": 0, "claimed": 0, "done": 0}
            per_annotator: dict[str, int] = {}
            for task in self._tasks.values():
                counts[task.effective_status(now)] += 1
                if task.status == STATUS_DONE and task.done_by:
                    per_annotator[task.done_by] = per_annotator.get(task.done_by, 0) + 1
            counts["per_annotator"] = {k: per_annotator[k] for k in sorted(per_annotator)}
            return counts

    def rankings(self) -> list[Ranking]:
        with self._lock:
            return sorted(
                self._rankings.values(),
                key=lambda r: (r.sample_id, r.part.value, r.annotator_id),
            )

    def export_rankings(self, path: str | Path) -> int:
        """Write all rankings as corpus records in deterministic order."""
        return save_corpus(self.rankings(), path)


def _task_id(sample_id: str, part: Part) -> str:
    return f"{part.value}:{sample_id}"


def create_app(store: TaskStore, static_dir: str | Path | None = None):
    """FastAPI app exposing the annotation endpoints plus the static UI."""
    from fastapi import FastAPI, HTTPException, Response
    from fastapi.responses import JSONResponse

    app = FastAPI(title="vistruct annotation service")

    @app.get("/api/criteria")
    def get_criteria() -> JSONResponse:
        return JSONResponse({"criteria": [c.to_obj() for c in ALL_CRITERIA]})

    @app.get("/api/progress")
    def get_progress() -> JSONResponse:
        return JSONResponse(store.progress())

    @app.get("/api/tasks/next")
    def get_next(annotator: str = "") -> Response:
        if not annotator:
            raise HTTPException(status_code=422, detail="annotator query parameter is required")
        task = store.next_task(annotator)
        if task is None:
            return Response(status_code=204)
        return JSONResponse(task.to_wire_obj(store.clock()))

    @app.get("/api/tasks/{task_id}")
    def get_task(task_id: str) -> JSONResponse:
        task = store.get_task(task_id)
        if task is None:
            raise HTTPException(status_code=404, detail=f"no task {task_id}")
        return JSONResponse(task.to_wire_obj(store.clock()))

    @app.post("/api/tasks/{task_id}/ranking")
    def post_ranking(task_id: str, payload: dict) -> JSONResponse:
        annotator = payload.get("annotator_id", "")
        order = payload.get("order")
        if not annotator or not isinstance(order, list):
            raise HTTPException(status_code=422, detail="annotator_id and order are required")
        try:
            ranking = store.submit_ranking(task_id, annotator, order)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no task {task_id}") from None
        except OrderError as exc:
            return JSONResponse({"error": "invalid_order", "detail": str(exc)}, status_code=422)
        except StaleClaimError as exc:
            return JSONResponse({"error": "stale_claim", "detail": str(exc)}, status_code=409)
        return JSONResponse(ranking.to_obj())

    if static_dir is not None and Path(static_dir).exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    return app
