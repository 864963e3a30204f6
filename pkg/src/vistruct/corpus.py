"""Record types and line-delimited JSON I/O for instruction corpora.

Every artifact that flows through the pipeline (instruction records, candidate
samples, rankings, preference pairs, filtration items) is one line of
self-describing JSON with top-level ``kind`` and ``version`` fields, so
corpora in the 100K+ range can be streamed record by record. Unknown fields
survive a load/save round-trip untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, TextIO

import numpy as np

from .errors import DuplicateIdError, SchemaError

SCHEMA_VERSION = 1


class Category(str, Enum):
    DETAIL_DESCRIPTION = "detail_description"
    COMPLEX_REASONING = "complex_reasoning"
    CONVERSATION = "conversation"


class Part(str, Enum):
    QUESTION = "question"
    ANSWER = "answer"


def _require(cond: bool, message: str, *, f: str | None = None) -> None:
    if not cond:
        raise SchemaError(message, field=f)


def _str_field(obj: dict, key: str, *, optional: bool = False) -> Any:
    val = obj.get(key)
    if val is None and optional:
        return None
    _require(isinstance(val, str), "expected a string", f=key)
    return val


@dataclass
class ImageRef:
    """Opaque reference to an image plus optional caption/bounding-box text."""

    id: str
    uri: str
    caption_context: list[str] | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        _require(bool(self.id), "image id must be non-empty", f="image.id")
        _require(bool(self.uri), "image uri must be non-empty", f="image.uri")
        if self.caption_context is not None:
            _require(
                all(isinstance(c, str) for c in self.caption_context),
                "caption_context entries must be strings",
                f="image.caption_context",
            )

    def context_text(self) -> str:
        """Caption/bounding-box block used by text-only generators."""
        return "\n".join(self.caption_context or [])

    def to_obj(self) -> dict[str, Any]:
        obj: dict[str, Any] = {"id": self.id, "uri": self.uri}
        if self.caption_context is not None:
            obj["caption_context"] = list(self.caption_context)
        obj.update(_sorted_extra(self.extra))
        return obj

    @classmethod
    def from_obj(cls, obj: Any) -> "ImageRef":
        _require(isinstance(obj, dict), "expected an object", f="image")
        known = {"id", "uri", "caption_context"}
        ref = cls(
            id=_str_field(obj, "id"),
            uri=_str_field(obj, "uri"),
            caption_context=obj.get("caption_context"),
            extra={k: v for k, v in obj.items() if k not in known},
        )
        ref.validate()
        return ref


@dataclass
class Turn:
    """One question/answer exchange. Answer may be empty while a record is
    still question-only."""

    question: str
    answer: str = ""

    def to_obj(self) -> dict[str, Any]:
        return {"question": self.question, "answer": self.answer}

    @classmethod
    def from_obj(cls, obj: Any) -> "Turn":
        _require(isinstance(obj, dict), "expected an object", f="turns")
        return cls(question=_str_field(obj, "question"), answer=obj.get("answer", ""))


def _parse_category(obj: dict) -> Category:
    raw = _str_field(obj, "category")
    try:
        return Category(raw)
    except ValueError:
        raise SchemaError(f"unknown category {raw!r}", field="category") from None


def _parse_part(obj: dict, key: str = "part") -> Part:
    raw = _str_field(obj, key)
    try:
        return Part(raw)
    except ValueError:
        raise SchemaError(f"unknown part {raw!r}", field=key) from None


def _sorted_extra(extra: dict[str, Any]) -> dict[str, Any]:
    return {k: extra[k] for k in sorted(extra)}


@dataclass
class InstructionRecord:
    """One image-grounded instruction: the unit the pipeline curates."""

    KIND = "instruction"

    id: str
    image: ImageRef
    category: Category
    turns: list[Turn]
    provenance: dict[str, str] = field(default_factory=dict)
    extra: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        _require(bool(self.id), "id must be non-empty", f="id")
        self.image.validate()
        _require(len(self.turns) >= 1, "turns length >= 1 violated", f="turns")
        if self.category is not Category.CONVERSATION:
            _require(
                len(self.turns) == 1,
                f"category {self.category.value} requires exactly 1 turn",
                f="turns",
            )
        for i, turn in enumerate(self.turns):
            _require(bool(turn.question), f"turn {i} question must be non-empty", f="turns")

    def to_obj(self) -> dict[str, Any]:
        obj: dict[str, Any] = {
            "kind": self.KIND,
            "version": SCHEMA_VERSION,
            "id": self.id,
            "image": self.image.to_obj(),
            "category": self.category.value,
            "turns": [t.to_obj() for t in self.turns],
            "provenance": dict(self.provenance),
        }
        obj.update(_sorted_extra(self.extra))
        return obj

    @classmethod
    def from_obj(cls, obj: dict[str, Any]) -> "InstructionRecord":
        known = {"kind", "version", "id", "image", "category", "turns", "provenance"}
        turns = obj.get("turns")
        _require(isinstance(turns, list), "expected a list", f="turns")
        rec = cls(
            id=_str_field(obj, "id"),
            image=ImageRef.from_obj(obj.get("image")),
            category=_parse_category(obj),
            turns=[Turn.from_obj(t) for t in turns],
            provenance=dict(obj.get("provenance") or {}),
            extra={k: v for k, v in obj.items() if k not in known},
        )
        rec.validate()
        return rec


@dataclass
class QuestionSample:
    """A seed question group plus generated alternatives awaiting ranking.

    Each candidate is a question group: one string per turn, so single-turn
    categories hold length-1 groups. Detail descriptions draw their questions
    from a fixed pool and are never sampled for question ranking.
    """

    KIND = "question_sample"

    id: str
    image: ImageRef
    category: Category
    candidates: list[list[str]]
    seed_index: int
    extra: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        _require(bool(self.id), "id must be non-empty", f="id")
        self.image.validate()
        _require(
            self.category is not Category.DETAIL_DESCRIPTION,
            "detail-description questions are not ranked",
            f="category",
        )
        # k generated candidates plus the seed, with k in [3, 6]
        _require(
            4 <= len(self.candidates) <= 7,
            f"expected 4..7 candidate groups, got {len(self.candidates)}",
            f="candidates",
        )
        for i, group in enumerate(self.candidates):
            _require(
                isinstance(group, list) and len(group) >= 1,
                f"candidate group {i} must be a non-empty list",
                f="candidates",
            )
            _require(
                all(isinstance(q, str) and q for q in group),
                f"candidate group {i} contains an empty question",
                f="candidates",
            )
        _require(0 <= self.seed_index < len(self.candidates), "seed_index out of range", f="seed_index")

    def group_texts(self, joiner: str = "\n") -> list[str]:
        """Candidate groups flattened to one text each (turns concatenated)."""
        return [joiner.join(group) for group in self.candidates]

    def to_obj(self) -> dict[str, Any]:
        obj: dict[str, Any] = {
            "kind": self.KIND,
            "version": SCHEMA_VERSION,
            "id": self.id,
            "image": self.image.to_obj(),
            "category": self.category.value,
            "candidates": [list(g) for g in self.candidates],
            "seed_index": self.seed_index,
        }
        obj.update(_sorted_extra(self.extra))
        return obj

    @classmethod
    def from_obj(cls, obj: dict[str, Any]) -> "QuestionSample":
        known = {"kind", "version", "id", "image", "category", "candidates", "seed_index"}
        candidates = obj.get("candidates")
        _require(isinstance(candidates, list), "expected a list", f="candidates")
        sample = cls(
            id=_str_field(obj, "id"),
            image=ImageRef.from_obj(obj.get("image")),
            category=_parse_category(obj),
            candidates=candidates,
            seed_index=int(obj.get("seed_index", -1)),
            extra={k: v for k, v in obj.items() if k not in known},
        )
        sample.validate()
        return sample


@dataclass
class AnswerSample:
    """A seed question plus candidate answers awaiting ranking.

    Single-turn samples hold ``seed_question: str`` and flat string
    candidates. Conversation samples hold one question per turn and
    candidate answers as per-candidate lists aligned across turns; they are
    decomposed into per-turn samples (with ``turn_index`` set) before
    annotation and pair extraction.
    """

    KIND = "answer_sample"

    id: str
    image: ImageRef
    seed_question: str | list[str]
    candidates: list[str] | list[list[str]]
    seed_index: int
    turn_index: int | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def is_multiturn(self) -> bool:
        return isinstance(self.seed_question, list)

    @property
    def num_turns(self) -> int:
        return len(self.seed_question) if self.is_multiturn else 1

    def validate(self) -> None:
        _require(bool(self.id), "id must be non-empty", f="id")
        self.image.validate()
        _require(
            4 <= len(self.candidates) <= 7,
            f"expected 4..7 candidate answers, got {len(self.candidates)}",
            f="candidates",
        )
        if self.is_multiturn:
            _require(len(self.seed_question) >= 1, "at least one turn question", f="seed_question")
            _require(
                all(isinstance(q, str) and q for q in self.seed_question),
                "turn questions must be non-empty strings",
                f="seed_question",
            )
            for i, cand in enumerate(self.candidates):
                _require(
                    isinstance(cand, list) and len(cand) == self.num_turns,
                    f"candidate {i} must carry one answer per turn",
                    f="candidates",
                )
                _require(
                    all(isinstance(a, str) and a for a in cand),
                    f"candidate {i} contains an empty answer",
                    f="candidates",
                )
        else:
            _require(bool(self.seed_question), "seed_question must be non-empty", f="seed_question")
            _require(
                all(isinstance(a, str) and a for a in self.candidates),
                "candidates must be non-empty strings",
                f="candidates",
            )
        _require(0 <= self.seed_index < len(self.candidates), "seed_index out of range", f="seed_index")

    def to_obj(self) -> dict[str, Any]:
        obj: dict[str, Any] = {
            "kind": self.KIND,
            "version": SCHEMA_VERSION,
            "id": self.id,
            "image": self.image.to_obj(),
            "seed_question": self.seed_question,
            "candidates": self.candidates,
            "seed_index": self.seed_index,
        }
        if self.turn_index is not None:
            obj["turn_index"] = self.turn_index
        obj.update(_sorted_extra(self.extra))
        return obj

    @classmethod
    def from_obj(cls, obj: dict[str, Any]) -> "AnswerSample":
        known = {"kind", "version", "id", "image", "seed_question", "candidates", "seed_index", "turn_index"}
        candidates = obj.get("candidates")
        _require(isinstance(candidates, list), "expected a list", f="candidates")
        sample = cls(
            id=_str_field(obj, "id"),
            image=ImageRef.from_obj(obj.get("image")),
            seed_question=obj.get("seed_question"),
            candidates=candidates,
            seed_index=int(obj.get("seed_index", -1)),
            turn_index=obj.get("turn_index"),
            extra={k: v for k, v in obj.items() if k not in known},
        )
        sample.validate()
        return sample


@dataclass
class FilterItem:
    """Filtration input: one question (group) and a fixed number of candidate
    answers per turn, attached to an image and category.

    ``questions`` holds one entry per turn; ``answer_candidates[t][i]`` is
    candidate ``i`` for turn ``t``.
    """

    KIND = "filter_item"

    id: str
    image: ImageRef
    category: Category
    questions: list[str]
    answer_candidates: list[list[str]]
    provenance: dict[str, str] = field(default_factory=dict)
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def num_turns(self) -> int:
        return len(self.questions)

    def question_text(self, joiner: str = "\n") -> str:
        return joiner.join(self.questions)

    def validate(self) -> None:
        _require(bool(self.id), "id must be non-empty", f="id")
        self.image.validate()
        _require(len(self.questions) >= 1, "at least one turn question", f="questions")
        if self.category is not Category.CONVERSATION:
            _require(len(self.questions) == 1, "single-turn category with multiple turns", f="questions")
        _require(
            all(isinstance(q, str) and q for q in self.questions),
            "questions must be non-empty strings",
            f="questions",
        )
        _require(
            len(self.answer_candidates) == len(self.questions),
            "one candidate list per turn required",
            f="answer_candidates",
        )
        for t, cands in enumerate(self.answer_candidates):
            _require(
                isinstance(cands, list) and len(cands) >= 1,
                f"turn {t} has no candidate answers",
                f="answer_candidates",
            )
            _require(
                all(isinstance(a, str) and a for a in cands),
                f"turn {t} contains an empty answer",
                f="answer_candidates",
            )

    def to_obj(self) -> dict[str, Any]:
        obj: dict[str, Any] = {
            "kind": self.KIND,
            "version": SCHEMA_VERSION,
            "id": self.id,
            "image": self.image.to_obj(),
            "category": self.category.value,
            "questions": list(self.questions),
            "answer_candidates": [list(c) for c in self.answer_candidates],
            "provenance": dict(self.provenance),
        }
        obj.update(_sorted_extra(self.extra))
        return obj

    @classmethod
    def from_obj(cls, obj: dict[str, Any]) -> "FilterItem":
        known = {"kind", "version", "id", "image", "category", "questions", "answer_candidates", "provenance"}
        item = cls(
            id=_str_field(obj, "id"),
            image=ImageRef.from_obj(obj.get("image")),
            category=_parse_category(obj),
            questions=obj.get("questions") or [],
            answer_candidates=obj.get("answer_candidates") or [],
            provenance=dict(obj.get("provenance") or {}),
            extra={k: v for k, v in obj.items() if k not in known},
        )
        item.validate()
        return item


@dataclass
class Ranking:
    """A best-to-worst ordering over one sample's candidates.

    ``order`` is a list of tie-groups; each tie-group is the set of candidate
    indices judged equal, and earlier groups beat later ones. A strict
    ranking is all singleton groups.
    """

    KIND = "ranking"

    sample_id: str
    part: Part
    order: list[list[int]]
    annotator_id: str
    created_at: str = ""
    extra: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        _require(bool(self.sample_id), "sample_id must be non-empty", f="sample_id")
        _require(bool(self.annotator_id), "annotator_id must be non-empty", f="annotator_id")
        _require(len(self.order) >= 1, "order must be non-empty", f="order")
        seen: set[int] = set()
        for g, group in enumerate(self.order):
            _require(
                isinstance(group, list) and len(group) >= 1,
                f"tie-group {g} must be non-empty",
                f="order",
            )
            for idx in group:
                _require(isinstance(idx, int) and idx >= 0, "candidate indices must be >= 0", f="order")
                _require(idx not in seen, f"candidate index {idx} appears twice", f="order")
                seen.add(idx)

    def flattened(self) -> list[int]:
        return [idx for group in self.order for idx in group]

    def covers(self, n_candidates: int) -> bool:
        """True iff the tie-groups partition exactly {0..n-1}."""
        flat = self.flattened()
        return len(flat) == n_candidates and set(flat) == set(range(n_candidates))

    def to_obj(self) -> dict[str, Any]:
        obj: dict[str, Any] = {
            "kind": self.KIND,
            "version": SCHEMA_VERSION,
            "sample_id": self.sample_id,
            "part": self.part.value,
            "order": [sorted(g) for g in self.order],
            "annotator_id": self.annotator_id,
            "created_at": self.created_at,
        }
        obj.update(_sorted_extra(self.extra))
        return obj

    @classmethod
    def from_obj(cls, obj: dict[str, Any]) -> "Ranking":
        known = {"kind", "version", "sample_id", "part", "order", "annotator_id", "created_at"}
        order = obj.get("order")
        _require(isinstance(order, list), "expected a list", f="order")
        ranking = cls(
            sample_id=_str_field(obj, "sample_id"),
            part=_parse_part(obj),
            order=[list(g) for g in order],
            annotator_id=_str_field(obj, "annotator_id"),
            created_at=obj.get("created_at", ""),
            extra={k: v for k, v in obj.items() if k not in known},
        )
        ranking.validate()
        return ranking


@dataclass
class PreferencePair:
    """An ordered (winner, loser) comparison over one image's candidates."""

    KIND = "preference_pair"

    image_id: str
    winner: str
    loser: str
    part: Part
    source_sample_id: str
    winner_index: int
    loser_index: int
    context_question: str | None = None
    turn_index: int | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        _require(bool(self.image_id), "image_id must be non-empty", f="image_id")
        _require(self.winner_index != self.loser_index, "winner and loser must differ", f="loser_index")
        if self.part is Part.ANSWER:
            _require(
                self.context_question is not None,
                "answer pairs require a context question",
                f="context_question",
            )

    def to_obj(self) -> dict[str, Any]:
        obj: dict[str, Any] = {
            "kind": self.KIND,
            "version": SCHEMA_VERSION,
            "image_id": self.image_id,
            "winner": self.winner,
            "loser": self.loser,
            "part": self.part.value,
            "source_sample_id": self.source_sample_id,
            "winner_index": self.winner_index,
            "loser_index": self.loser_index,
        }
        if self.context_question is not None:
            obj["context_question"] = self.context_question
        if self.turn_index is not None:
            obj["turn_index"] = self.turn_index
        obj.update(_sorted_extra(self.extra))
        return obj

    @classmethod
    def from_obj(cls, obj: dict[str, Any]) -> "PreferencePair":
        known = {
            "kind", "version", "image_id", "winner", "loser", "part",
            "source_sample_id", "winner_index", "loser_index",
            "context_question", "turn_index",
        }
        pair = cls(
            image_id=_str_field(obj, "image_id"),
            winner=_str_field(obj, "winner"),
            loser=_str_field(obj, "loser"),
            part=_parse_part(obj),
            source_sample_id=_str_field(obj, "source_sample_id"),
            winner_index=int(obj["winner_index"]),
            loser_index=int(obj["loser_index"]),
            context_question=obj.get("context_question"),
            turn_index=obj.get("turn_index"),
            extra={k: v for k, v in obj.items() if k not in known},
        )
        pair.validate()
        return pair


RECORD_KINDS = {
    InstructionRecord.KIND: InstructionRecord,
    QuestionSample.KIND: QuestionSample,
    AnswerSample.KIND: AnswerSample,
    FilterItem.KIND: FilterItem,
    Ranking.KIND: Ranking,
    PreferencePair.KIND: PreferencePair,
}

Record = InstructionRecord | QuestionSample | AnswerSample | FilterItem | Ranking | PreferencePair


def dumps_record(record: Record) -> str:
    return json.dumps(record.to_obj(), ensure_ascii=False, separators=(",", ":"))


def loads_record(text: str, kind: str | None = None, *, line: int | None = None) -> Record:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", line=line) from None
    if not isinstance(obj, dict):
        raise SchemaError("record line must be a JSON object", line=line)
    found = obj.get("kind")
    if kind is not None and found != kind:
        raise SchemaError(f"expected kind {kind!r}, found {found!r}", field="kind", line=line)
    cls = RECORD_KINDS.get(found)
    if cls is None:
        raise SchemaError(f"unknown record kind {found!r}", field="kind", line=line)
    try:
        return cls.from_obj(obj)
    except SchemaError as exc:
        raise SchemaError(str(exc), field=exc.field, line=line) from None


def _record_key(record: Record) -> tuple | None:
    """Uniqueness key for duplicate detection, or None when not applicable."""
    if isinstance(record, Ranking):
        return ("ranking", record.sample_id, record.part.value, record.annotator_id)
    if isinstance(record, PreferencePair):
        return None
    return (record.KIND, record.id)


def load_corpus(path: str | Path, kind: str) -> Iterator[Record]:
    """Stream records of the given kind from a line-delimited file.

    Raises SchemaError (with the 1-based line number) on the first malformed
    line and DuplicateIdError when an identifier repeats.
    """
    if kind not in RECORD_KINDS:
        raise ValueError(f"unknown record kind {kind!r}")
    path = Path(path)
    seen: set[tuple] = set()
    with path.open("r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            raw = raw.strip()
            if not raw:
                continue
            record = loads_record(raw, kind, line=lineno)
            key = _record_key(record)
            if key is not None:
                if key in seen:
                    raise DuplicateIdError(f"duplicate id {key[1]!r}", field="id", line=lineno)
                seen.add(key)
            yield record


def save_corpus(records: Iterable[Record], path: str | Path) -> int:
    """Write records one per line, validating each. Returns the count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as handle:
        count = write_records(records, handle)
    return count


def write_records(records: Iterable[Record], handle: TextIO) -> int:
    count = 0
    for record in records:
        record.validate()
        handle.write(dumps_record(record))
        handle.write("\n")
        count += 1
    return count


def split_dataset(samples: list, train_count: int, seed: int) -> tuple[list, list]:
    """Deterministic train/test split: disjoint, order-stable for a seed.

    The paper's reward datasets use 700/100 (questions) and 800/160
    (answers); any sizes work as long as train_count <= len(samples).
    """
    if train_count > len(samples):
        raise ValueError(f"train_count {train_count} exceeds dataset size {len(samples)}")
    if train_count < 0:
        raise ValueError("train_count must be >= 0")
    perm = np.random.default_rng(seed).permutation(len(samples))
    train = [samples[i] for i in perm[:train_count]]
    test = [samples[i] for i in perm[train_count:]]
    return train, test
