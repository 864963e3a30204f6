"""Pair-extraction tests, including brute-force tie-group oracles."""

from __future__ import annotations

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vistruct.corpus import AnswerSample, Category, ImageRef, Part, QuestionSample, Ranking
from vistruct.errors import SchemaError
from vistruct.prefs import build_pref_datasets, expand_multiturn, pairs_from_ranking


def image(i=0):
    return ImageRef(id=f"img-{i}", uri=f"{i}.jpg")


def answer_sample(n_candidates=4, i=0):
    return AnswerSample(
        id=f"as-{i}", image=image(i), seed_question="what?",
        candidates=[f"answer {c}" for c in range(n_candidates)], seed_index=0,
    )


def question_sample(n_candidates=4, i=0, turns=1):
    return QuestionSample(
        id=f"qs-{i}", image=image(i), category=Category.CONVERSATION if turns > 1 else Category.COMPLEX_REASONING,
        candidates=[[f"g{c} q{t}" for t in range(turns)] for c in range(n_candidates)],
        seed_index=0,
    )


def ranking_for(sample, order, part=None):
    part = part or (Part.QUESTION if isinstance(sample, QuestionSample) else Part.ANSWER)
    return Ranking(sample_id=sample.id, part=part, order=order, annotator_id="a1")


def oracle_pairs(order: list[list[int]]) -> set[tuple[int, int]]:
    """Brute force: (w, l) iff w's tie-group strictly precedes l's."""
    group_of = {}
    for g, group in enumerate(order):
        for idx in group:
            group_of[idx] = g
    n = len(group_of)
    return {
        (w, l)
        for w, l in itertools.permutations(range(n), 2)
        if group_of[w] < group_of[l]
    }


class TestPairsFromRanking:
    def test_strict_order_of_four(self):
        """Strict ranking [2,0,3,1] -> C(4,2)=6 pairs including 2 over 1."""
        sample = answer_sample(4)
        pairs = pairs_from_ranking(sample, ranking_for(sample, [[2], [0], [3], [1]]))
        assert len(pairs) == 6
        assert any(p.winner_index == 2 and p.loser_index == 1 for p in pairs)
        assert all(p.context_question == "what?" for p in pairs)

    def test_tie_on_top(self):
        """Order [{0,1},{2}] -> exactly the 2 cross-group pairs."""
        sample = answer_sample(3)
        pairs = pairs_from_ranking(sample, ranking_for(sample, [[0, 1], [2]]))
        got = {(p.winner_index, p.loser_index) for p in pairs}
        assert got == oracle_pairs([[0, 1], [2]]) == {(0, 2), (1, 2)}

    def test_single_candidate_no_pairs(self):
        sample = answer_sample(4)
        ranking = Ranking(sample_id=sample.id, part=Part.ANSWER, order=[[0, 1, 2, 3]], annotator_id="a")
        assert pairs_from_ranking(sample, ranking) == []

    def test_question_groups_concatenated(self):
        sample = question_sample(4, turns=2)
        pairs = pairs_from_ranking(sample, ranking_for(sample, [[1], [0], [2], [3]]))
        assert pairs[0].winner == "g1 q0\ng1 q1"
        assert pairs[0].context_question is None

    def test_mismatched_sample_rejected(self):
        sample = answer_sample(4)
        ranking = ranking_for(sample, [[0], [1], [2], [3]])
        ranking.sample_id = "other"
        with pytest.raises(SchemaError):
            pairs_from_ranking(sample, ranking)

    def test_incomplete_ranking_rejected(self):
        sample = answer_sample(4)
        with pytest.raises(SchemaError):
            pairs_from_ranking(sample, ranking_for(sample, [[0], [1]]))

    def test_out_of_bounds_rejected(self):
        sample = answer_sample(4)
        with pytest.raises(SchemaError):
            pairs_from_ranking(sample, ranking_for(sample, [[0], [1], [2], [7]]))


@st.composite
def tie_grouped_orders(draw):
    n = draw(st.integers(min_value=1, max_value=6))
    indices = list(range(n))
    rng = draw(st.randoms(use_true_random=False))
    rng.shuffle(indices)
    order = []
    while indices:
        size = draw(st.integers(min_value=1, max_value=len(indices)))
        order.append(sorted(indices[:size]))
        indices = indices[size:]
    return n, order


@settings(max_examples=200, deadline=None)
@given(tie_grouped_orders())
def test_pairs_match_brute_force_oracle(case):
    n, order = case
    sample = AnswerSample(
        id="s", image=image(), seed_question="q?",
        candidates=[f"c{i}" for i in range(n)], seed_index=0,
    )
    ranking = Ranking(sample_id="s", part=Part.ANSWER, order=order, annotator_id="a")
    got = {(p.winner_index, p.loser_index) for p in pairs_from_ranking(sample, ranking)}
    expected = oracle_pairs(order)
    assert got == expected
    # antisymmetry and the C(n,2) bound
    assert all((l, w) not in got for w, l in got)
    assert len(got) <= n * (n - 1) // 2
    strict = all(len(g) == 1 for g in order)
    assert (len(got) == n * (n - 1) // 2) == strict
    # acyclicity via topological layering over the induced relation
    assert _is_acyclic(n, got)


def _is_acyclic(n, edges):
    adjacency = {i: [] for i in range(n)}
    indegree = {i: 0 for i in range(n)}
    for w, l in edges:
        adjacency[w].append(l)
        indegree[l] += 1
    frontier = [i for i in range(n) if indegree[i] == 0]
    seen = 0
    while frontier:
        node = frontier.pop()
        seen += 1
        for nxt in adjacency[node]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                frontier.append(nxt)
    return seen == n


class TestExpandMultiturn:
    def test_three_turns_two_generated(self):
        """t=3, l=2 -> 3 samples x 3 candidate answers each."""
        sample = AnswerSample(
            id="conv", image=image(), seed_question=["q0", "q1", "q2"],
            candidates=[[f"c{c}t{t}" for t in range(3)] for c in range(3)],
            seed_index=0,
        )
        expanded = expand_multiturn(sample)
        assert [s.id for s in expanded] == ["conv#turn_0", "conv#turn_1", "conv#turn_2"]
        assert all(len(s.candidates) == 3 for s in expanded)
        assert expanded[1].seed_question == "q1"
        assert expanded[1].candidates == ["c0t1", "c1t1", "c2t1"]
        assert [s.turn_index for s in expanded] == [0, 1, 2]

    def test_single_turn_identity(self):
        sample = answer_sample(4)
        assert expand_multiturn(sample) == [sample]

    def test_ragged_candidates_rejected(self):
        sample = AnswerSample(
            id="conv", image=image(), seed_question=["q0", "q1", "q2"],
            candidates=[["a", "b", "c"], ["a", "b"], ["a", "b", "c"], ["a", "b", "c"]],
            seed_index=0,
        )
        with pytest.raises(SchemaError):
            expand_multiturn(sample)


class TestBuildPrefDatasets:
    def test_counting_oracle_800_samples(self):
        """800 question samples with strict rankings of 4 -> 800 * C(4,2)."""
        samples = [question_sample(4, i=i) for i in range(800)]
        rankings = [ranking_for(s, [[0], [1], [2], [3]]) for s in samples]
        result = build_pref_datasets(samples, rankings)
        assert len(result.question_pairs) == 800 * 6
        assert result.answer_pairs == []

    def test_no_rankings_all_skipped(self):
        samples = [question_sample(4, i=1), answer_sample(4, i=2)]
        result = build_pref_datasets(samples, [])
        assert result.question_pairs == [] and result.answer_pairs == []
        assert result.skipped_question_ids == ["qs-1"]
        assert result.skipped_answer_ids == ["as-2"]

    def test_two_turn_conversation_pairs_carry_turn_index(self):
        sample = AnswerSample(
            id="conv", image=image(), seed_question=["q0", "q1"],
            candidates=[[f"c{c}t{t}" for t in range(2)] for c in range(4)],
            seed_index=0,
        )
        rankings = [
            Ranking(sample_id="conv#turn_0", part=Part.ANSWER, order=[[0], [1], [2], [3]], annotator_id="a"),
            Ranking(sample_id="conv#turn_1", part=Part.ANSWER, order=[[3], [2], [1], [0]], annotator_id="a"),
        ]
        result = build_pref_datasets([sample], rankings)
        # per-turn enumeration oracle: each turn contributes C(4,2) pairs
        assert len(result.answer_pairs) == 12
        assert {p.turn_index for p in result.answer_pairs} == {0, 1}
        by_turn = {t: [p for p in result.answer_pairs if p.turn_index == t] for t in (0, 1)}
        assert all(p.context_question == "q0" for p in by_turn[0])
        assert all(p.context_question == "q1" for p in by_turn[1])

    def test_orphan_ranking_rejected_unless_allowed(self):
        sample = question_sample(4, i=0)
        orphan = Ranking(sample_id="ghost", part=Part.QUESTION, order=[[0], [1], [2], [3]], annotator_id="a")
        with pytest.raises(SchemaError):
            build_pref_datasets([sample], [orphan])
        result = build_pref_datasets([sample], [orphan], allow_orphan_rankings=True)
        assert result.question_pairs == []


def test_multiple_annotators_each_contribute_pairs():
    """Two annotators on one sample yield both pair sets, annotator-ordered."""
    sample = question_sample(4, i=0)
    first = Ranking(sample_id=sample.id, part=Part.QUESTION,
                    order=[[0], [1], [2], [3]], annotator_id="b-second")
    second = Ranking(sample_id=sample.id, part=Part.QUESTION,
                     order=[[3], [2], [1], [0]], annotator_id="a-first")
    result = build_pref_datasets([sample], [first, second])
    assert len(result.question_pairs) == 12
    # deterministic order: annotator ids ascending
    assert result.question_pairs[0].winner_index == 3  # a-first's top pick
    assert result.question_pairs[6].winner_index == 0  # b-second's top pick
