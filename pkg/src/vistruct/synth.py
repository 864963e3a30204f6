"""Deterministic synthetic corpora for tests, demos, and dry runs.

Everything here is a pure function of its seed: record ids, captions,
candidate texts, and simulated rankings are all derived from hashes, so two
runs with the same arguments produce byte-identical files.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .corpus import (
    AnswerSample,
    Category,
    FilterItem,
    ImageRef,
    InstructionRecord,
    Part,
    QuestionSample,
    Ranking,
    Turn,
)

#: Fixed pool of detail-description questions; the category's questions are
#: drawn from here rather than generated per image.
DETAIL_QUESTION_POOL = (
    "Describe the scene in the image in detail.",
    "What is happening in this image? Describe it thoroughly.",
    "Give a detailed account of everything visible in the picture.",
    "Provide a comprehensive description of the image.",
)


def _h(seed: int, *parts: str) -> int:
    digest = hashlib.sha256("|".join((str(seed), *parts)).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _phrase(seed: int, *parts: str) -> str:
    return f"{'-'.join(parts)}-{_h(seed, *parts) % 10**8:08d}"


def pick_detail_question(seed: int, image_id: str) -> str:
    return DETAIL_QUESTION_POOL[_h(seed, "detail-q", image_id) % len(DETAIL_QUESTION_POOL)]


def make_seed_corpus(
    n_items: int,
    seed: int = 0,
    detail_fraction: float = 0.1,
    conversation_fraction: float = 0.3,
    max_turns: int = 3,
) -> list[InstructionRecord]:
    """Synthetic seed instructions with a fixed category mix.

    The first ``detail_fraction`` of items are detail descriptions, the next
    ``conversation_fraction`` are conversations (2..max_turns turns), and the
    rest are complex reasoning.
    """
    rng = np.random.default_rng(seed)
    records = []
    n_detail = int(round(detail_fraction * n_items))
    n_conv = int(round(conversation_fraction * n_items))
    for i in range(n_items):
        rid = f"rec-{i:06d}"
        image = ImageRef(
            id=f"img-{i:06d}",
            uri=f"images/{i:06d}.jpg",
            caption_context=[
                f"A photo of {_phrase(seed, rid, 'subject')} near {_phrase(seed, rid, 'place')}.",
                f"{_phrase(seed, rid, 'object')}: (0.1, 0.2, 0.6, 0.8)",
            ],
        )
        if i < n_detail:
            category = Category.DETAIL_DESCRIPTION
            turns = [
                Turn(
                    question=pick_detail_question(seed, image.id),
                    answer=f"The scene centers on {_phrase(seed, rid, 'detail')}.",
                )
            ]
        elif i < n_detail + n_conv:
            category = Category.CONVERSATION
            n_turns = 2 + int(rng.integers(0, max(1, max_turns - 1)))
            turns = [
                Turn(
                    question=f"What about {_phrase(seed, rid, f'topic{t}')}?",
                    answer=f"It involves {_phrase(seed, rid, f'answer{t}')}.",
                )
                for t in range(n_turns)
            ]
        else:
            category = Category.COMPLEX_REASONING
            turns = [
                Turn(
                    question=f"Why might {_phrase(seed, rid, 'cause')} lead to {_phrase(seed, rid, 'effect')}?",
                    answer=f"Because {_phrase(seed, rid, 'reason')} suggests so.",
                )
            ]
        record = InstructionRecord(
            id=rid,
            image=image,
            category=category,
            turns=turns,
            provenance={"generator": "synthetic"},
        )
        record.validate()
        records.append(record)
    return records


def make_filter_items(
    records: list[InstructionRecord],
    answers_per_item: int = 3,
    seed: int = 0,
) -> list[FilterItem]:
    """Filtration inputs derived from seed records: one question (group) and
    ``answers_per_item`` synthetic candidate answers per turn."""
    items = []
    for record in records:
        questions = [t.question for t in record.turns]
        candidates = [
            [
                f"Answer variant {c}: {_phrase(seed, record.id, f'turn{t}', f'cand{c}')}."
                for c in range(answers_per_item)
            ]
            for t in range(len(questions))
        ]
        item = FilterItem(
            id=record.id,
            image=record.image,
            category=record.category,
            questions=questions,
            answer_candidates=candidates,
            provenance=dict(record.provenance),
        )
        item.validate()
        items.append(item)
    return items


def make_candidate_samples(
    records: list[InstructionRecord],
    k: int = 3,
    l: int = 3,
    seed: int = 0,
) -> tuple[list[QuestionSample], list[AnswerSample]]:
    """Candidate question/answer samples for annotation, seeded per record.

    Question samples skip detail descriptions; every sample carries the seed
    candidate at index 0 plus k (or l) generated alternatives.
    """
    question_samples = []
    answer_samples = []
    for record in records:
        questions = [t.question for t in record.turns]
        if record.category is not Category.DETAIL_DESCRIPTION:
            groups = [list(questions)]
            for c in range(k):
                groups.append(
                    [
                        f"{q} (alt {_phrase(seed, record.id, f'q{c}t{t}')})"
                        for t, q in enumerate(questions)
                    ]
                )
            qs = QuestionSample(
                id=f"{record.id}/q",
                image=record.image,
                category=record.category,
                candidates=groups,
                seed_index=0,
            )
            qs.validate()
            question_samples.append(qs)

        seed_answers = [t.answer for t in record.turns]
        if record.category is Category.CONVERSATION:
            cands: list = [list(seed_answers)]
            for c in range(l):
                cands.append(
                    [
                        f"{a} (variant {_phrase(seed, record.id, f'a{c}t{t}')})"
                        for t, a in enumerate(seed_answers)
                    ]
                )
            sample = AnswerSample(
                id=f"{record.id}/a",
                image=record.image,
                seed_question=questions,
                candidates=cands,
                seed_index=0,
            )
        else:
            flat = [seed_answers[0]]
            flat += [
                f"{seed_answers[0]} (variant {_phrase(seed, record.id, f'a{c}')})"
                for c in range(l)
            ]
            sample = AnswerSample(
                id=f"{record.id}/a",
                image=record.image,
                seed_question=questions[0],
                candidates=flat,
                seed_index=0,
            )
        sample.validate()
        answer_samples.append(sample)
    return question_samples, answer_samples


def simulate_rankings(
    samples,
    seed: int = 0,
    annotator_id: str = "synth-annotator",
    created_at: str = "1970-01-01T00:00:00+00:00",
) -> list[Ranking]:
    """Deterministic stand-in for human rankings: candidates ordered by a
    seeded hash of their text (strict order, no ties)."""
    from .prefs import candidate_texts, expand_multiturn

    rankings = []
    for sample in samples:
        if isinstance(sample, AnswerSample):
            expanded = expand_multiturn(sample)
            part = Part.ANSWER
        else:
            expanded = [sample]
            part = Part.QUESTION
        for sub in expanded:
            texts = candidate_texts(sub)
            order = sorted(range(len(texts)), key=lambda i: (_h(seed, "rank", sub.id, texts[i]), i))
            ranking = Ranking(
                sample_id=sub.id,
                part=part,
                order=[[i] for i in order],
                annotator_id=annotator_id,
                created_at=created_at,
            )
            ranking.validate()
            rankings.append(ranking)
    return rankings


def planted_preference_pairs(
    n_pairs: int,
    dim: int = 16,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pairs labeled by a hidden linear utility.

    Features are uniform in [-1, 1]^dim; of each sampled feature pair, the
    one with the higher <w*, phi> becomes the winner. Returns (winners,
    losers, w_star).
    """
    rng = np.random.default_rng(seed)
    w_star = rng.standard_normal(dim)
    a = rng.uniform(-1.0, 1.0, size=(n_pairs, dim))
    b = rng.uniform(-1.0, 1.0, size=(n_pairs, dim))
    a_wins = (a @ w_star) > (b @ w_star)
    winners = np.where(a_wins[:, None], a, b)
    losers = np.where(a_wins[:, None], b, a)
    return winners, losers, w_star
