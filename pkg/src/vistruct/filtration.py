"""Two-stage filtration: keep the top questions, then the best-answered items.

Stage 1 scores each item's question (conversation groups as one concatenated
text) and keeps the top alpha percent; detail descriptions bypass this stage
because their questions come from a fixed pool. Stage 2 scores every
candidate answer, selects the best per item (per turn for conversations,
averaging the per-turn winners), and keeps the top beta percent; detail
descriptions are ranked among themselves at the composed alpha*beta rate so
the overall sampling rate stays uniform. Kept counts use floor (minimum one
survivor at stage 1 for a non-empty pool) and ties break by ascending id.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .corpus import Category, FilterItem, InstructionRecord, Turn
from .errors import QuarantineOverflowError, SchemaError, VistructError
from .prefs import QUESTION_GROUP_JOINER

MANIFEST_VERSION = 1

#: Fraction of items allowed to quarantine before the run is aborted.
QUARANTINE_LIMIT = 0.01

QuestionScorer = Callable[[FilterItem], float]
AnswerScorer = Callable[[FilterItem, int, str], float]
StatusFn = Callable[[dict], None]

#: Emit one status record per this many scored items.
STATUS_EVERY = 1000


@dataclass
class FiltrationConfig:
    alpha_pct: float
    beta_pct: float
    answers_per_item: int = 3
    tie_break: str = "by_id"

    def validate(self) -> None:
        for name, rate in (("alpha_pct", self.alpha_pct), ("beta_pct", self.beta_pct)):
            if not 0 < rate <= 100:
                raise VistructError(f"{name} must be in (0, 100], got {rate}")
        if self.answers_per_item < 1:
            raise VistructError("answers_per_item must be >= 1")
        if self.tie_break != "by_id":
            raise VistructError(f"unknown tie_break {self.tie_break!r}")

    def to_obj(self) -> dict:
        return {
            "alpha_pct": self.alpha_pct,
            "beta_pct": self.beta_pct,
            "answers_per_item": self.answers_per_item,
            "tie_break": self.tie_break,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "FiltrationConfig":
        config = cls(
            alpha_pct=obj["alpha_pct"],
            beta_pct=obj["beta_pct"],
            answers_per_item=int(obj.get("answers_per_item", 3)),
            tie_break=obj.get("tie_break", "by_id"),
        )
        config.validate()
        return config


def stage1_keep_count(pool_size: int, alpha_pct: float) -> int:
    """floor(alpha% * n), but never starve a non-empty pool."""
    if pool_size == 0:
        return 0
    return max(1, math.floor(alpha_pct * pool_size / 100.0))


def stage2_keep_count(pool_size: int, beta_pct: float) -> int:
    return math.floor(beta_pct * pool_size / 100.0)


def detail_keep_count(pool_size: int, alpha_pct: float, beta_pct: float) -> int:
    return math.floor(alpha_pct * beta_pct * pool_size / 10000.0)


def select_top(scores: dict[str, float], keep: int) -> list[str]:
    """Ids of the top ``keep`` scores, descending, ties by ascending id."""
    ranked = sorted(scores, key=lambda i: (-scores[i], i))
    return ranked[:keep]


@dataclass
class ScoredItem:
    """Per-item scoring record kept in the run manifest.

    ``answer_scores`` and ``chosen_answer_index`` hold one entry per turn
    (single-turn items have length-1 lists). The chosen index per turn is
    the argmax with ties resolved to the lowest index; the final score is
    the chosen answer's score, averaged across turns for conversations.
    """

    KIND = "scored_item"

    record_id: str
    category: Category
    question_score: float | None = None
    answer_scores: list[list[float]] = field(default_factory=list)
    chosen_answer_index: list[int] = field(default_factory=list)
    final_answer_score: float | None = None
    stage1_kept: bool = False
    stage2_kept: bool = False
    stage1_rank: int | None = None
    stage2_rank: int | None = None
    error: str | None = None

    def to_obj(self) -> dict:
        return {
            "kind": self.KIND,
            "version": MANIFEST_VERSION,
            "record_id": self.record_id,
            "category": self.category.value,
            "question_score": self.question_score,
            "answer_scores": self.answer_scores,
            "chosen_answer_index": self.chosen_answer_index,
            "final_answer_score": self.final_answer_score,
            "stage1_kept": self.stage1_kept,
            "stage2_kept": self.stage2_kept,
            "stage1_rank": self.stage1_rank,
            "stage2_rank": self.stage2_rank,
            "error": self.error,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "ScoredItem":
        return cls(
            record_id=obj["record_id"],
            category=Category(obj["category"]),
            question_score=obj.get("question_score"),
            answer_scores=obj.get("answer_scores") or [],
            chosen_answer_index=obj.get("chosen_answer_index") or [],
            final_answer_score=obj.get("final_answer_score"),
            stage1_kept=bool(obj.get("stage1_kept")),
            stage2_kept=bool(obj.get("stage2_kept")),
            stage1_rank=obj.get("stage1_rank"),
            stage2_rank=obj.get("stage2_rank"),
            error=obj.get("error"),
        )


@dataclass
class RunManifest:
    """Deterministic audit record of one filtration run."""

    config: FiltrationConfig
    counts: dict[str, int] = field(default_factory=dict)
    thresholds: dict[str, float | None] = field(default_factory=dict)
    seeds: dict[str, int] = field(default_factory=dict)
    checkpoint_digests: dict[str, str] = field(default_factory=dict)
    notes: dict[str, str] = field(default_factory=dict)
    items: list[ScoredItem] = field(default_factory=list)

    def header_obj(self) -> dict:
        return {
            "kind": "run_manifest",
            "version": MANIFEST_VERSION,
            "config": self.config.to_obj(),
            "counts": self.counts,
            "thresholds": self.thresholds,
            "seeds": self.seeds,
            "checkpoint_digests": self.checkpoint_digests,
            "notes": self.notes,
        }

    def validate(self) -> None:
        n, n1, n2 = self.counts.get("input", 0), self.counts.get("stage1", 0), self.counts.get("final", 0)
        if not n2 <= n1 <= n:
            raise SchemaError(f"manifest counts must satisfy final <= stage1 <= input, got {n2}/{n1}/{n}")

    def kept_ids(self) -> list[str]:
        return [item.record_id for item in self.items if item.stage2_kept]


def save_manifest(manifest: RunManifest, path: str | Path) -> None:
    """Header line followed by one scored-item line per input item."""
    manifest.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        handle.write(json.dumps(manifest.header_obj(), separators=(",", ":"), ensure_ascii=False) + "\n")
        for item in manifest.items:
            handle.write(json.dumps(item.to_obj(), separators=(",", ":"), ensure_ascii=False) + "\n")


def load_manifest(path: str | Path) -> RunManifest:
    with Path(path).open("r", encoding="utf-8") as handle:
        header = json.loads(handle.readline())
        if header.get("kind") != "run_manifest":
            raise SchemaError(f"not a run manifest: {path}", field="kind")
        manifest = RunManifest(
            config=FiltrationConfig.from_obj(header["config"]),
            counts=header.get("counts") or {},
            thresholds=header.get("thresholds") or {},
            seeds=header.get("seeds") or {},
            checkpoint_digests=header.get("checkpoint_digests") or {},
            notes=header.get("notes") or {},
        )
        for line in handle:
            line = line.strip()
            if line:
                manifest.items.append(ScoredItem.from_obj(json.loads(line)))
    manifest.validate()
    return manifest


@dataclass
class StageFragment:
    """Scores, ranks, and quarantine decisions from one stage."""

    scores: dict[str, float] = field(default_factory=dict)
    ranks: dict[str, int] = field(default_factory=dict)
    kept_ids: set[str] = field(default_factory=set)
    bypassed_ids: set[str] = field(default_factory=set)
    quarantined: dict[str, str] = field(default_factory=dict)
    threshold: float | None = None
    # stage-2 extras, keyed by item id
    answer_scores: dict[str, list[list[float]]] = field(default_factory=dict)
    chosen: dict[str, list[int]] = field(default_factory=dict)
    detail_ranks: dict[str, int] = field(default_factory=dict)
    detail_kept_ids: set[str] = field(default_factory=set)
    detail_threshold: float | None = None


def stage1_filter(
    items: list[FilterItem],
    question_scorer: QuestionScorer,
    alpha_pct: float,
    status: StatusFn | None = None,
) -> tuple[list[FilterItem], StageFragment]:
    """Keep the top alpha percent of non-detail items by question score.

    Detail descriptions pass through unscored. Items whose scorer raises are
    quarantined (reported in the fragment) and the run continues.
    """
    fragment = StageFragment()
    by_id = {}
    for item in items:
        if item.id in by_id:
            raise SchemaError(f"duplicate item id {item.id!r}", field="id")
        by_id[item.id] = item

    scored = 0
    for item in items:
        if item.category is Category.DETAIL_DESCRIPTION:
            fragment.bypassed_ids.add(item.id)
            continue
        try:
            value = float(question_scorer(item))
            if not math.isfinite(value):
                raise VistructError("question score is non-finite")
        except Exception as exc:  # quarantine, never abort the batch
            fragment.quarantined[item.id] = f"stage1: {exc}"
            continue
        fragment.scores[item.id] = value
        scored += 1
        if status and scored % STATUS_EVERY == 0:
            status({"stage": "stage1", "scored": scored})

    keep = stage1_keep_count(len(fragment.scores), alpha_pct)
    ranked = select_top(fragment.scores, len(fragment.scores))
    fragment.ranks = {item_id: rank + 1 for rank, item_id in enumerate(ranked)}
    fragment.kept_ids = set(ranked[:keep])
    if keep:
        fragment.threshold = min(fragment.scores[i] for i in fragment.kept_ids)

    survivors = [
        item for item in items
        if item.id in fragment.kept_ids or item.id in fragment.bypassed_ids
    ]
    survivors.sort(key=lambda item: item.id)
    return survivors, fragment


def stage2_filter(
    items: list[FilterItem],
    answer_scorer: AnswerScorer,
    alpha_pct: float,
    beta_pct: float,
    answers_per_item: int = 3,
    status: StatusFn | None = None,
) -> tuple[list[FilterItem], StageFragment]:
    """Select each item's best answer, then keep the top beta percent.

    Non-detail items are ranked against each other; detail descriptions are
    ranked among themselves and kept at the composed alpha*beta rate. The
    best answer is chosen per turn for conversations and the per-turn scores
    are averaged into the item's final score.
    """
    fragment = StageFragment()
    finals_nondetail: dict[str, float] = {}
    finals_detail: dict[str, float] = {}

    scored = 0
    for item in items:
        if any(len(cands) < answers_per_item for cands in item.answer_candidates):
            fragment.quarantined[item.id] = (
                f"stage2: fewer than {answers_per_item} candidate answers"
            )
            continue
        try:
            per_turn_scores: list[list[float]] = []
            chosen: list[int] = []
            chosen_scores: list[float] = []
            for t, candidates in enumerate(item.answer_candidates):
                values = [float(answer_scorer(item, t, answer)) for answer in candidates]
                if not all(math.isfinite(v) for v in values):
                    raise VistructError(f"non-finite answer score at turn {t}")
                best = max(range(len(values)), key=lambda i: (values[i], -i))
                per_turn_scores.append(values)
                chosen.append(best)
                chosen_scores.append(values[best])
        except Exception as exc:
            fragment.quarantined[item.id] = f"stage2: {exc}"
            continue
        final = sum(chosen_scores) / len(chosen_scores)
        fragment.answer_scores[item.id] = per_turn_scores
        fragment.chosen[item.id] = chosen
        fragment.scores[item.id] = final
        if item.category is Category.DETAIL_DESCRIPTION:
            finals_detail[item.id] = final
        else:
            finals_nondetail[item.id] = final
        scored += 1
        if status and scored % STATUS_EVERY == 0:
            status({"stage": "stage2", "scored": scored})

    keep_nd = stage2_keep_count(len(finals_nondetail), beta_pct)
    ranked_nd = select_top(finals_nondetail, len(finals_nondetail))
    fragment.ranks = {item_id: rank + 1 for rank, item_id in enumerate(ranked_nd)}
    fragment.kept_ids = set(ranked_nd[:keep_nd])
    if keep_nd:
        fragment.threshold = min(finals_nondetail[i] for i in fragment.kept_ids)

    keep_d = detail_keep_count(len(finals_detail), alpha_pct, beta_pct)
    ranked_d = select_top(finals_detail, len(finals_detail))
    fragment.detail_ranks = {item_id: rank + 1 for rank, item_id in enumerate(ranked_d)}
    fragment.detail_kept_ids = set(ranked_d[:keep_d])
    if keep_d:
        fragment.detail_threshold = min(finals_detail[i] for i in fragment.detail_kept_ids)

    kept_all = fragment.kept_ids | fragment.detail_kept_ids
    survivors = [item for item in items if item.id in kept_all]
    survivors.sort(key=lambda item: item.id)
    return survivors, fragment


def run_filtration(
    items: list[FilterItem],
    question_scorer: QuestionScorer,
    answer_scorer: AnswerScorer,
    config: FiltrationConfig,
    seed: int = 0,
    checkpoint_digests: dict[str, str] | None = None,
    manifest_path: str | Path | None = None,
    status: StatusFn | None = None,
) -> tuple[list[InstructionRecord], RunManifest]:
    """Stage 1 then stage 2, producing the curated corpus and its manifest.

    The manifest is written to ``manifest_path`` even when the run aborts
    because too many items quarantined. Curated records are ordered by id
    and carry their ranks and scores in provenance.
    """
    config.validate()
    for item in items:
        item.validate()

    survivors1, frag1 = stage1_filter(items, question_scorer, config.alpha_pct, status=status)
    survivors2, frag2 = stage2_filter(
        survivors1,
        answer_scorer,
        config.alpha_pct,
        config.beta_pct,
        answers_per_item=config.answers_per_item,
        status=status,
    )

    manifest = RunManifest(
        config=config,
        seeds={"global": seed},
        checkpoint_digests=dict(checkpoint_digests or {}),
        counts={"input": len(items), "stage1": len(survivors1), "final": len(survivors2)},
        thresholds={
            "stage1": frag1.threshold,
            "stage2_nondetail": frag2.threshold,
            "stage2_detail": frag2.detail_threshold,
        },
        notes={"detail_stage2_rule": "score_ranked_top_alpha_beta_pct"},
    )
    for item in sorted(items, key=lambda i: i.id):
        entry = ScoredItem(record_id=item.id, category=item.category)
        entry.question_score = frag1.scores.get(item.id)
        entry.stage1_kept = item.id in frag1.kept_ids or item.id in frag1.bypassed_ids
        entry.stage1_rank = frag1.ranks.get(item.id)
        entry.answer_scores = frag2.answer_scores.get(item.id, [])
        entry.chosen_answer_index = frag2.chosen.get(item.id, [])
        entry.final_answer_score = frag2.scores.get(item.id)
        entry.stage2_kept = item.id in frag2.kept_ids or item.id in frag2.detail_kept_ids
        entry.stage2_rank = frag2.ranks.get(item.id) or frag2.detail_ranks.get(item.id)
        entry.error = frag1.quarantined.get(item.id) or frag2.quarantined.get(item.id)
        manifest.items.append(entry)

    if manifest_path is not None:
        save_manifest(manifest, manifest_path)

    quarantined = len(frag1.quarantined) + len(frag2.quarantined)
    if items and quarantined / len(items) > QUARANTINE_LIMIT:
        raise QuarantineOverflowError(
            f"{quarantined}/{len(items)} items quarantined (limit {QUARANTINE_LIMIT:.0%})"
        )

    curated = []
    for item in survivors2:
        chosen = frag2.chosen[item.id]
        turns = [
            Turn(question=q, answer=item.answer_candidates[t][chosen[t]])
            for t, q in enumerate(item.questions)
        ]
        provenance = dict(item.provenance)
        provenance.update(
            {
                "stage1_rank": str(frag1.ranks.get(item.id, 0)),
                "stage2_rank": str(frag2.ranks.get(item.id) or frag2.detail_ranks.get(item.id, 0)),
                "question_score": repr(frag1.scores[item.id]) if item.id in frag1.scores else "",
                "answer_score": repr(frag2.scores[item.id]),
            }
        )
        record = InstructionRecord(
            id=item.id,
            image=item.image,
            category=item.category,
            turns=turns,
            provenance=provenance,
        )
        record.validate()
        curated.append(record)
    curated.sort(key=lambda record: record.id)
    return curated, manifest


def make_reward_scorers(question_model, answer_model, featurizer) -> tuple[QuestionScorer, AnswerScorer]:
    """Adapt trained scorer checkpoints to the filtration callables."""
    from .reward import score

    def question_scorer(item: FilterItem) -> float:
        features = featurizer.featurize_question(item.image, item.question_text(QUESTION_GROUP_JOINER))
        return score(question_model, features)

    def answer_scorer(item: FilterItem, turn: int, answer: str) -> float:
        features = featurizer.featurize_answer(item.image, item.questions[turn], answer)
        return score(answer_model, features)

    return question_scorer, answer_scorer


def manifest_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def subset_is_top(scores: dict[str, float], kept: Iterable[str]) -> bool:
    """True iff min(kept scores) >= max(rejected scores); vacuous when a side
    is empty. Used by dominance checks."""
    kept = set(kept)
    kept_scores = [scores[i] for i in kept if i in scores]
    rejected = [scores[i] for i in scores if i not in kept]
    if not kept_scores or not rejected:
        return True
    return min(kept_scores) >= max(rejected)
