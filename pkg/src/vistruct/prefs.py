"""Turn human rankings into pairwise preference datasets.

A ranking with tie-groups induces one (winner, loser) pair per cross-group
candidate pair; ties produce no pair, so a strict ranking of n candidates
yields exactly C(n, 2) pairs. Conversation question groups are compared
holistically (turns concatenated into one text), while conversation answers
are decomposed into per-turn samples before pair extraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .corpus import AnswerSample, Part, PreferencePair, QuestionSample, Ranking
from .errors import SchemaError

#: Joiner between the turn questions of one candidate group when the group
#: is treated as a single text.
QUESTION_GROUP_JOINER = "\n"

CandidateSample = QuestionSample | AnswerSample


def candidate_texts(sample: CandidateSample) -> list[str]:
    """The flat text of each candidate, as scored and compared downstream."""
    if isinstance(sample, QuestionSample):
        return sample.group_texts(QUESTION_GROUP_JOINER)
    if sample.is_multiturn:
        raise SchemaError(
            f"sample {sample.id!r}: expand multi-turn answer samples before pair extraction",
            field="candidates",
        )
    return list(sample.candidates)


def pairs_from_ranking(sample: CandidateSample, ranking: Ranking) -> list[PreferencePair]:
    """All ordered pairs induced by one ranking of one sample's candidates.

    Every candidate in an earlier tie-group beats every candidate in a later
    one; candidates within a tie-group are never paired. Output order is
    deterministic: tie-groups best to worst, indices ascending within groups.
    """
    expected_part = Part.QUESTION if isinstance(sample, QuestionSample) else Part.ANSWER
    if ranking.sample_id != sample.id:
        raise SchemaError(
            f"ranking targets sample {ranking.sample_id!r}, got sample {sample.id!r}",
            field="sample_id",
        )
    if ranking.part is not expected_part:
        raise SchemaError(
            f"ranking part {ranking.part.value!r} does not match sample part {expected_part.value!r}",
            field="part",
        )
    texts = candidate_texts(sample)
    if not ranking.covers(len(texts)):
        raise SchemaError(
            f"ranking over sample {sample.id!r} must cover candidate indices 0..{len(texts) - 1}",
            field="order",
        )

    context = None
    turn_index = None
    if isinstance(sample, AnswerSample):
        context = sample.seed_question
        turn_index = sample.turn_index

    pairs: list[PreferencePair] = []
    groups = [sorted(g) for g in ranking.order]
    for gi in range(len(groups)):
        for gj in range(gi + 1, len(groups)):
            for wi in groups[gi]:
                for li in groups[gj]:
                    pairs.append(
                        PreferencePair(
                            image_id=sample.image.id,
                            winner=texts[wi],
                            loser=texts[li],
                            part=expected_part,
                            source_sample_id=sample.id,
                            winner_index=wi,
                            loser_index=li,
                            context_question=context,
                            turn_index=turn_index,
                        )
                    )
    return pairs


def expand_multiturn(sample: AnswerSample) -> list[AnswerSample]:
    """Decompose a t-turn answer sample into t single-turn samples.

    Turn i carries the turn's question and every candidate's answer for that
    turn, under the derived id ``{parent}#turn_{i}``. Single-turn samples
    pass through unchanged (a one-turn conversation is flattened in place).
    """
    if not sample.is_multiturn:
        return [sample]
    turns = len(sample.seed_question)
    for c, cand in enumerate(sample.candidates):
        if not isinstance(cand, list) or len(cand) != turns:
            raise SchemaError(
                f"sample {sample.id!r}: candidate {c} has "
                f"{len(cand) if isinstance(cand, list) else 'no'} turns, expected {turns}",
                field="candidates",
            )
    if turns == 1:
        return [
            AnswerSample(
                id=sample.id,
                image=sample.image,
                seed_question=sample.seed_question[0],
                candidates=[cand[0] for cand in sample.candidates],
                seed_index=sample.seed_index,
                turn_index=0,
                extra=dict(sample.extra),
            )
        ]
    return [
        AnswerSample(
            id=f"{sample.id}#turn_{t}",
            image=sample.image,
            seed_question=sample.seed_question[t],
            candidates=[cand[t] for cand in sample.candidates],
            seed_index=sample.seed_index,
            turn_index=t,
            extra=dict(sample.extra),
        )
        for t in range(turns)
    ]


@dataclass
class PrefBuildResult:
    """Pair datasets plus a report of samples that had no ranking."""

    question_pairs: list[PreferencePair] = field(default_factory=list)
    answer_pairs: list[PreferencePair] = field(default_factory=list)
    skipped_question_ids: list[str] = field(default_factory=list)
    skipped_answer_ids: list[str] = field(default_factory=list)


def build_pref_datasets(
    samples: list[CandidateSample],
    rankings: list[Ranking],
    allow_orphan_rankings: bool = False,
) -> PrefBuildResult:
    """Assemble the question and answer pair datasets from ranked samples.

    Multi-turn answer samples are expanded first, so rankings must reference
    the expanded per-turn ids. Samples with no ranking are skipped and
    reported; rankings that reference no known sample are an error unless
    ``allow_orphan_rankings`` (useful when pairing a train/test subset
    against the full ranking log). Output order is deterministic: samples by
    id, then annotator, then pair index.
    """
    question_samples: list[QuestionSample] = []
    answer_samples: list[AnswerSample] = []
    for sample in samples:
        if isinstance(sample, QuestionSample):
            question_samples.append(sample)
        else:
            answer_samples.extend(expand_multiturn(sample))

    by_key: dict[tuple[str, str], list[Ranking]] = {}
    for ranking in rankings:
        by_key.setdefault((ranking.sample_id, ranking.part.value), []).append(ranking)

    known = {(s.id, Part.QUESTION.value) for s in question_samples}
    known |= {(s.id, Part.ANSWER.value) for s in answer_samples}
    orphans = sorted(set(by_key) - known)
    if orphans and not allow_orphan_rankings:
        raise SchemaError(f"rankings reference unknown samples: {orphans[:5]}")

    result = PrefBuildResult()
    for sample in sorted(question_samples, key=lambda s: s.id):
        matched = by_key.get((sample.id, Part.QUESTION.value))
        if not matched:
            result.skipped_question_ids.append(sample.id)
            continue
        for ranking in sorted(matched, key=lambda r: r.annotator_id):
            result.question_pairs.extend(pairs_from_ranking(sample, ranking))
    for sample in sorted(answer_samples, key=lambda s: s.id):
        matched = by_key.get((sample.id, Part.ANSWER.value))
        if not matched:
            result.skipped_answer_ids.append(sample.id)
            continue
        for ranking in sorted(matched, key=lambda r: r.annotator_id):
            result.answer_pairs.extend(pairs_from_ranking(sample, ranking))
    return result
