"""Candidate generation: questions, answers, and filtration items.

Drives the chat backends over the seed corpus, applies the refusal filter,
and assembles candidate samples (for annotation) or filtration items (for
the large-scale curation pass). Generators are (client, modality) pairs;
each produces ``fan_out`` responses per prompt, mirroring the
three-responses-per-model collection scheme.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .corpus import (
    AnswerSample,
    Category,
    FilterItem,
    InstructionRecord,
    QuestionSample,
)
from .genkit.clients import ChatClient, ChatRequest
from .genkit.refusal import is_refusal
from .genkit.templates import render_answer_prompts, render_question_prompt
from .synth import pick_detail_question

#: (client, modality) pairs; modality selects the prompt variant.
Generator = tuple[ChatClient, str]

_QUESTION_LINE = re.compile(r"^\s*question\s*:\s*(.+)$", re.IGNORECASE)
_ANSWER_LABEL = re.compile(r"^\s*answer\s*:", re.IGNORECASE | re.MULTILINE)

#: Generated-candidate count must land in this range for a sample to be kept.
MIN_GENERATED = 3
MAX_GENERATED = 6


@dataclass
class GenReport:
    """Counts for one generation pass.

    ``kept`` counts responses that survive the refusal filter; a sample whose
    surviving count still falls outside the collection bounds is dropped
    whole (``samples_dropped``), which can discard kept responses from the
    output.
    """

    prompts_sent: int = 0
    kept: int = 0
    refusals_dropped: int = 0
    extraction_failures: int = 0
    samples_dropped: int = 0

    def to_obj(self) -> dict:
        return {
            "prompts_sent": self.prompts_sent,
            "kept": self.kept,
            "refusals_dropped": self.refusals_dropped,
            "extraction_failures": self.extraction_failures,
            "samples_dropped": self.samples_dropped,
        }


def extract_questions(text: str) -> list[str]:
    """Pull generated questions out of a response.

    Lines labeled ``Question:`` win; otherwise everything before the first
    ``Answer:`` label (generators asked for a question often volunteer an
    answer too) is treated as one question.
    """
    labeled = [m.group(1).strip() for line in text.splitlines() if (m := _QUESTION_LINE.match(line))]
    labeled = [q for q in labeled if q]
    if labeled:
        return labeled
    cut = _ANSWER_LABEL.split(text, maxsplit=1)[0].strip()
    return [cut] if cut else []


def _complete(client: ChatClient, prompt: str, model: str, temperature: float, max_tokens: int) -> str:
    request = ChatRequest(
        model=model,
        messages=[{"role": "user", "content": prompt}],
        temperature=temperature,
        max_tokens=max_tokens,
    )
    return client.complete(request).content


@dataclass
class GenerationSettings:
    fan_out: int = 3
    model: str = "generator"
    temperature: float = 0.7
    max_tokens: int = 1024
    refusal_prefixes: tuple[str, ...] = field(default_factory=tuple)

    def prefixes(self):
        from .genkit.refusal import DEFAULT_REFUSAL_PREFIXES

        return self.refusal_prefixes or DEFAULT_REFUSAL_PREFIXES


def generate_question_samples(
    records: list[InstructionRecord],
    generators: list[Generator],
    settings: GenerationSettings | None = None,
) -> tuple[list[QuestionSample], GenReport]:
    """Candidate question groups per non-detail seed record.

    The seed group sits at index 0; each generator contributes ``fan_out``
    generated groups, minus refusals. Samples whose surviving generated
    count falls outside [3, 6] are dropped and reported.
    """
    settings = settings or GenerationSettings()
    report = GenReport()
    samples = []
    for record in records:
        if record.category is Category.DETAIL_DESCRIPTION:
            continue
        seed_group = [t.question for t in record.turns]
        groups: list[list[str]] = []
        for client, modality in generators:
            prompt = render_question_prompt(record.category, record.image, modality)
            for _ in range(settings.fan_out):
                report.prompts_sent += 1
                text = _complete(client, prompt, settings.model, settings.temperature, settings.max_tokens)
                if is_refusal(text, settings.prefixes()):
                    report.refusals_dropped += 1
                    continue
                questions = extract_questions(text)
                if not questions:
                    report.extraction_failures += 1
                    continue
                report.kept += 1
                groups.append(questions)
        groups = groups[:MAX_GENERATED]
        if len(groups) < MIN_GENERATED:
            report.samples_dropped += 1
            continue
        sample = QuestionSample(
            id=f"{record.id}/q",
            image=record.image,
            category=record.category,
            candidates=[seed_group] + groups,
            seed_index=0,
        )
        sample.validate()
        samples.append(sample)
    return samples, report


def _generate_single_answer(
    client: ChatClient,
    modality: str,
    record: InstructionRecord,
    settings: GenerationSettings,
    report: GenReport,
) -> str | None:
    prompt = render_answer_prompts(
        record.category, record.turns[0].question, record.image, modality
    )[0]
    report.prompts_sent += 1
    text = _complete(client, prompt, settings.model, settings.temperature, settings.max_tokens).strip()
    if is_refusal(text, settings.prefixes()):
        report.refusals_dropped += 1
        return None
    if not text:
        report.extraction_failures += 1
        return None
    return text


def _generate_conversation_answers(
    client: ChatClient,
    modality: str,
    record: InstructionRecord,
    settings: GenerationSettings,
    report: GenReport,
) -> list[str] | None:
    """One candidate: answers for every turn, generated autoregressively."""
    questions = [t.question for t in record.turns]
    answers: list[str] = []
    for t in range(len(questions)):
        # Render with the question prefix seen so far; prompt t only embeds
        # answers 0..t-1, so this equals the full conversation's turn-t prompt.
        prompt = render_answer_prompts(
            Category.CONVERSATION, questions[: t + 1], record.image, modality, prior_answers=answers
        )[t]
        report.prompts_sent += 1
        text = _complete(client, prompt, settings.model, settings.temperature, settings.max_tokens).strip()
        if is_refusal(text, settings.prefixes()):
            report.refusals_dropped += 1
            return None
        if not text:
            report.extraction_failures += 1
            return None
        answers.append(text)
    return answers


def generate_answer_samples(
    records: list[InstructionRecord],
    generators: list[Generator],
    settings: GenerationSettings | None = None,
) -> tuple[list[AnswerSample], GenReport]:
    """Candidate answers per seed record, seed answer at index 0."""
    settings = settings or GenerationSettings()
    report = GenReport()
    samples = []
    for record in records:
        if record.category is Category.CONVERSATION:
            candidates: list = [[t.answer for t in record.turns]]
            for client, modality in generators:
                for _ in range(settings.fan_out):
                    answers = _generate_conversation_answers(client, modality, record, settings, report)
                    if answers is not None:
                        report.kept += 1
                        candidates.append(answers)
        else:
            candidates = [record.turns[0].answer]
            for client, modality in generators:
                for _ in range(settings.fan_out):
                    answer = _generate_single_answer(client, modality, record, settings, report)
                    if answer is not None:
                        report.kept += 1
                        candidates.append(answer)
        generated = len(candidates) - 1
        if generated < MIN_GENERATED:
            report.samples_dropped += 1
            continue
        candidates = candidates[: MAX_GENERATED + 1]
        if record.category is Category.CONVERSATION:
            sample = AnswerSample(
                id=f"{record.id}/a",
                image=record.image,
                seed_question=[t.question for t in record.turns],
                candidates=candidates,
                seed_index=0,
            )
        else:
            sample = AnswerSample(
                id=f"{record.id}/a",
                image=record.image,
                seed_question=record.turns[0].question,
                candidates=candidates,
                seed_index=0,
            )
        sample.validate()
        samples.append(sample)
    return samples, report


def generate_filter_items(
    records: list[InstructionRecord],
    generators: list[Generator],
    answers_per_item: int = 3,
    settings: GenerationSettings | None = None,
    seed: int = 0,
) -> tuple[list[FilterItem], GenReport]:
    """Large-scale curation inputs: the seed question (a pool question for
    detail descriptions) plus ``answers_per_item`` generated answers per
    turn. Items that cannot reach the required answer count are dropped."""
    settings = settings or GenerationSettings()
    report = GenReport()
    items = []
    for record in records:
        if record.category is Category.DETAIL_DESCRIPTION:
            questions = [pick_detail_question(seed, record.image.id)]
        else:
            questions = [t.question for t in record.turns]
        per_turn: list[list[str]] = [[] for _ in questions]
        if record.category is Category.CONVERSATION:
            for client, modality in generators:
                produced = 0
                while produced < answers_per_item:
                    answers = _generate_conversation_answers(client, modality, record, settings, report)
                    produced += 1
                    if answers is None:
                        continue
                    for t, answer in enumerate(answers):
                        per_turn[t].append(answer)
                if all(len(turn) >= answers_per_item for turn in per_turn):
                    break
        else:
            for client, modality in generators:
                for _ in range(answers_per_item):
                    answer = _generate_single_answer(client, modality, record, settings, report)
                    if answer is not None:
                        per_turn[0].append(answer)
                if len(per_turn[0]) >= answers_per_item:
                    break
        if any(len(turn) < answers_per_item for turn in per_turn):
            report.samples_dropped += 1
            continue
        per_turn = [turn[:answers_per_item] for turn in per_turn]
        report.kept += sum(len(turn) for turn in per_turn)
        item = FilterItem(
            id=record.id,
            image=record.image,
            category=record.category,
            questions=questions,
            answer_candidates=per_turn,
            provenance=dict(record.provenance),
        )
        item.validate()
        items.append(item)
    return items, report
