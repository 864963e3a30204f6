"""Rewrite-then-review style alignment with fallback to originals.

Each turn is rewritten by the target LLM into its own writing style, then
the original and revision are shown back to the same LLM for a verdict. A
revision is adopted only when the rewrite parsed cleanly, actually changed
the text, and the review explicitly approved it; every other path keeps the
original, so alignment can never lose or corrupt a record.
"""

from __future__ import annotations

import json
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable

from .corpus import InstructionRecord, Turn
from .errors import ClientError, RewriteParseError
from .genkit.clients import ChatClient, ChatRequest
from .genkit.templates import render_align_prompts

AUDIT_VERSION = 1

REVIEW_FINE_SENTENCE = "The Revised Question and Revised Answer are fine."
REVIEW_WRONG_SENTENCE = "There is something wrong with the Revised Question or Revised Answer."

DECISION_ACCEPT = "accept_revised"
DECISION_KEEP = "keep_original"

_REWRITE_LABELS = ("revised question", "revised answer", "explanation")
_LABEL_RE = re.compile(r"^\s*(revised question|revised answer|explanation)\s*:\s*", re.IGNORECASE)


@dataclass
class RevisionResult:
    revised_question: str
    revised_answer: str
    explanation: str
    changed: bool
    raw_response: str


@dataclass
class ReviewVerdict:
    decision: str
    rationale: str
    raw_response: str


def parse_rewrite(
    response_text: str,
    original_question: str | None = None,
    original_answer: str | None = None,
) -> RevisionResult:
    """Extract the three labeled sections from a rewrite response.

    Sections are keyed by label, not position, so any label order parses. A
    missing label is a parse failure and the caller falls back to the
    original text.
    """
    sections: dict[str, list[str]] = {}
    current: str | None = None
    for line in response_text.splitlines():
        match = _LABEL_RE.match(line)
        if match:
            current = match.group(1).lower()
            if current in sections:
                raise RewriteParseError(f"duplicate section {current!r} in rewrite response")
            sections[current] = [line[match.end():]]
        elif current is not None:
            sections[current].append(line)
    missing = [label for label in _REWRITE_LABELS if label not in sections]
    if missing:
        raise RewriteParseError(f"rewrite response missing sections: {missing}")
    revised_question = "\n".join(sections["revised question"]).strip()
    revised_answer = "\n".join(sections["revised answer"]).strip()
    explanation = "\n".join(sections["explanation"]).strip()
    changed = True
    if original_question is not None and original_answer is not None:
        changed = (
            revised_question != original_question.strip()
            or revised_answer != original_answer.strip()
        )
    return RevisionResult(
        revised_question=revised_question,
        revised_answer=revised_answer,
        explanation=explanation,
        changed=changed,
        raw_response=response_text,
    )


def _normalize(text: str) -> str:
    return " ".join(text.split()).casefold()


def parse_review(response_text: str) -> ReviewVerdict:
    """Map a review response to a verdict by its fixed sentences.

    Ambiguous responses (neither sentence, or both) default to keeping the
    original, with an empty rationale marking the parse fallback.
    """
    normalized = _normalize(response_text)
    has_fine = _normalize(REVIEW_FINE_SENTENCE) in normalized
    has_wrong = _normalize(REVIEW_WRONG_SENTENCE) in normalized
    if has_wrong and not has_fine:
        return ReviewVerdict(DECISION_KEEP, response_text.strip(), response_text)
    if has_fine and not has_wrong:
        return ReviewVerdict(DECISION_ACCEPT, response_text.strip(), response_text)
    return ReviewVerdict(DECISION_KEEP, "", response_text)


@dataclass
class AuditEntry:
    """One turn's alignment outcome, stored append-only for resumption."""

    KIND = "align_audit"

    record_id: str
    turn: int
    original_q: str
    original_a: str
    revised_q: str
    revised_a: str
    decision: str
    reason: str
    rationale: str
    created_at: str = ""

    def to_obj(self) -> dict:
        return {
            "kind": self.KIND,
            "version": AUDIT_VERSION,
            "record_id": self.record_id,
            "turn": self.turn,
            "original_q": self.original_q,
            "original_a": self.original_a,
            "revised_q": self.revised_q,
            "revised_a": self.revised_a,
            "decision": self.decision,
            "reason": self.reason,
            "rationale": self.rationale,
            "created_at": self.created_at,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "AuditEntry":
        return cls(
            record_id=obj["record_id"],
            turn=int(obj["turn"]),
            original_q=obj.get("original_q", ""),
            original_a=obj.get("original_a", ""),
            revised_q=obj.get("revised_q", ""),
            revised_a=obj.get("revised_a", ""),
            decision=obj["decision"],
            reason=obj.get("reason", ""),
            rationale=obj.get("rationale", ""),
            created_at=obj.get("created_at", ""),
        )

    def adopted_turn(self) -> Turn:
        if self.decision == DECISION_ACCEPT:
            return Turn(question=self.revised_q, answer=self.revised_a)
        return Turn(question=self.original_q, answer=self.original_a)


Clock = Callable[[], str]


def iso_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def align_record(
    record: InstructionRecord,
    client: ChatClient,
    model: str = "inner-llm",
    temperature: float = 0.0,
    max_tokens: int = 1024,
    clock: Clock = iso_now,
) -> tuple[InstructionRecord, list[AuditEntry]]:
    """Rewrite and review every turn of one record.

    Multi-turn conversations are aligned turn by turn. The output record
    always exists: any failure along the way (client exhaustion, unparseable
    rewrite, ambiguous or negative review) retains the original turn.
    """
    record.validate()

    def ask(prompt: str) -> str:
        request = ChatRequest(
            model=model,
            messages=[{"role": "user", "content": prompt}],
            temperature=temperature,
            max_tokens=max_tokens,
        )
        return client.complete(request).content

    entries: list[AuditEntry] = []
    turns: list[Turn] = []
    for t, turn in enumerate(record.turns):
        entry = AuditEntry(
            record_id=record.id,
            turn=t,
            original_q=turn.question,
            original_a=turn.answer,
            revised_q="",
            revised_a="",
            decision=DECISION_KEEP,
            reason="",
            rationale="",
            created_at=clock(),
        )
        try:
            raw = ask(render_align_prompts("rewrite", turn.question, turn.answer))
        except ClientError as exc:
            entry.reason = "client_failure"
            entry.rationale = str(exc)
            entries.append(entry)
            turns.append(Turn(turn.question, turn.answer))
            continue
        try:
            revision = parse_rewrite(raw, turn.question, turn.answer)
        except RewriteParseError as exc:
            entry.reason = "rewrite_parse_failure"
            entry.rationale = str(exc)
            entries.append(entry)
            turns.append(Turn(turn.question, turn.answer))
            continue
        entry.revised_q = revision.revised_question
        entry.revised_a = revision.revised_answer
        if not revision.changed:
            entry.reason = "unchanged"
            entry.rationale = revision.explanation
            entries.append(entry)
            turns.append(Turn(turn.question, turn.answer))
            continue
        try:
            review_raw = ask(
                render_align_prompts(
                    "review",
                    turn.question,
                    turn.answer,
                    revision.revised_question,
                    revision.revised_answer,
                )
            )
        except ClientError as exc:
            entry.reason = "client_failure"
            entry.rationale = str(exc)
            entries.append(entry)
            turns.append(Turn(turn.question, turn.answer))
            continue
        verdict = parse_review(review_raw)
        entry.rationale = verdict.rationale
        if verdict.decision == DECISION_ACCEPT:
            entry.decision = DECISION_ACCEPT
            entry.reason = "accepted"
            turns.append(Turn(revision.revised_question, revision.revised_answer))
        else:
            entry.reason = "review_rejected" if verdict.rationale else "review_parse_failure"
            turns.append(Turn(turn.question, turn.answer))
        entries.append(entry)

    accepted = sum(1 for e in entries if e.decision == DECISION_ACCEPT)
    provenance = dict(record.provenance)
    provenance.update(
        {
            "align_mode": "per_turn",
            "align_decision": DECISION_ACCEPT if accepted else DECISION_KEEP,
            "align_turns_accepted": f"{accepted}/{len(entries)}",
        }
    )
    aligned = InstructionRecord(
        id=record.id,
        image=record.image,
        category=record.category,
        turns=turns,
        provenance=provenance,
        extra=dict(record.extra),
    )
    aligned.validate()
    return aligned, entries


def load_audit(path: str | Path) -> list[AuditEntry]:
    path = Path(path)
    if not path.exists():
        return []
    entries = []
    with path.open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                entries.append(AuditEntry.from_obj(json.loads(line)))
    return entries


@dataclass
class AlignSummary:
    accepted: int = 0
    kept_original: int = 0
    client_failures: int = 0
    records_skipped: int = 0

    def to_obj(self) -> dict:
        return {
            "accepted": self.accepted,
            "kept_original": self.kept_original,
            "client_failures": self.client_failures,
            "records_skipped": self.records_skipped,
        }


def align_corpus(
    records: Iterable[InstructionRecord],
    client: ChatClient,
    audit_path: str | Path,
    parallelism: int = 1,
    failure_rate_limit: float = 1.0,
    clock: Clock = iso_now,
) -> tuple[list[InstructionRecord], AlignSummary]:
    """Align a corpus, resuming from the audit log and preserving order.

    A record whose every turn already has an audit entry is not re-sent to
    the client; its aligned form is rebuilt from the log (last entry per
    turn wins). The audit file is append-only with a single writer.
    """
    records = list(records)
    existing: dict[tuple[str, int], AuditEntry] = {}
    for entry in load_audit(audit_path):
        existing[(entry.record_id, entry.turn)] = entry

    audit_path = Path(audit_path)
    audit_path.parent.mkdir(parents=True, exist_ok=True)
    write_lock = threading.Lock()
    summary = AlignSummary()

    def replay(record: InstructionRecord) -> InstructionRecord | None:
        entries = [existing.get((record.id, t)) for t in range(len(record.turns))]
        if any(e is None for e in entries):
            return None
        provenance = dict(record.provenance)
        accepted = sum(1 for e in entries if e.decision == DECISION_ACCEPT)
        provenance.update(
            {
                "align_mode": "per_turn",
                "align_decision": DECISION_ACCEPT if accepted else DECISION_KEEP,
                "align_turns_accepted": f"{accepted}/{len(entries)}",
            }
        )
        return InstructionRecord(
            id=record.id,
            image=record.image,
            category=record.category,
            turns=[e.adopted_turn() for e in entries],
            provenance=provenance,
            extra=dict(record.extra),
        )

    def process(record: InstructionRecord) -> tuple[InstructionRecord, list[AuditEntry], bool]:
        replayed = replay(record)
        if replayed is not None:
            entries = [existing[(record.id, t)] for t in range(len(record.turns))]
            return replayed, entries, True
        aligned, entries = align_record(record, client, clock=clock)
        return aligned, entries, False

    results: list[tuple[InstructionRecord, list[AuditEntry], bool]]
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(process, records))
    else:
        results = [process(record) for record in records]

    aligned_records = []
    total_turns = 0
    with audit_path.open("a", encoding="utf-8") as handle:
        for aligned, entries, was_replayed in results:
            aligned_records.append(aligned)
            if was_replayed:
                summary.records_skipped += 1
            for entry in entries:
                total_turns += 1
                if entry.decision == DECISION_ACCEPT:
                    summary.accepted += 1
                else:
                    summary.kept_original += 1
                if entry.reason == "client_failure":
                    summary.client_failures += 1
                if not was_replayed:
                    with write_lock:
                        handle.write(
                            json.dumps(entry.to_obj(), separators=(",", ":"), ensure_ascii=False) + "\n"
                        )
    if total_turns and summary.client_failures / total_turns > failure_rate_limit:
        raise ClientError(
            f"alignment failure rate {summary.client_failures}/{total_turns} "
            f"exceeds limit {failure_rate_limit:.0%}"
        )
    return aligned_records, summary
