"""Two-stage filtration tests against a full-sort brute-force oracle."""

from __future__ import annotations

import math

import numpy as np
import pytest

from vistruct.corpus import Category, FilterItem, ImageRef
from vistruct.errors import QuarantineOverflowError
from vistruct.filtration import (
    FiltrationConfig,
    detail_keep_count,
    load_manifest,
    run_filtration,
    save_manifest,
    stage1_filter,
    stage1_keep_count,
    stage2_filter,
    stage2_keep_count,
    subset_is_top,
)


def make_item(i, category=Category.COMPLEX_REASONING, turns=1, n_answers=3):
    return FilterItem(
        id=f"item-{i:05d}",
        image=ImageRef(id=f"img-{i:05d}", uri=f"{i}.jpg"),
        category=category,
        questions=[f"q{t} of {i}" for t in range(turns)],
        answer_candidates=[[f"a{c} t{t} of {i}" for c in range(n_answers)] for t in range(turns)],
    )


def make_mixed_corpus(n_nondetail, n_detail, rng=None, max_turns=3):
    rng = rng or np.random.default_rng(0)
    items = []
    for i in range(n_nondetail):
        if rng.random() < 0.3:
            items.append(make_item(i, Category.CONVERSATION, turns=int(rng.integers(2, max_turns + 1))))
        else:
            items.append(make_item(i, Category.COMPLEX_REASONING))
    for i in range(n_nondetail, n_nondetail + n_detail):
        items.append(make_item(i, Category.DETAIL_DESCRIPTION))
    return items


def hash_qscore(item):
    return float((hash(item.id) % 9973) / 9973)


def hash_ascore(item, turn, answer):
    return float((hash((item.id, turn, answer)) % 9973) / 9973)


# -- independent oracle ------------------------------------------------------


def oracle_two_stage(items, qscore, ascore, alpha, beta):
    """Full-sort reimplementation: returns (stage1 ids, final ids, finals)."""
    nondetail = [i for i in items if i.category is not Category.DETAIL_DESCRIPTION]
    detail = [i for i in items if i.category is Category.DETAIL_DESCRIPTION]

    ranked1 = sorted(nondetail, key=lambda it: (-qscore(it), it.id))
    keep1 = 0 if not ranked1 else max(1, math.floor(alpha * len(ranked1) / 100.0))
    stage1 = set(it.id for it in ranked1[:keep1]) | {it.id for it in detail}

    def final_score(item):
        per_turn_best = []
        for t, cands in enumerate(item.answer_candidates):
            per_turn_best.append(max(ascore(item, t, a) for a in cands))
        return sum(per_turn_best) / len(per_turn_best)

    survivors_nd = [it for it in ranked1[:keep1]]
    finals_nd = {it.id: final_score(it) for it in survivors_nd}
    finals_d = {it.id: final_score(it) for it in detail}

    ranked_nd = sorted(finals_nd, key=lambda i: (-finals_nd[i], i))
    keep_nd = math.floor(beta * len(ranked_nd) / 100.0)
    ranked_d = sorted(finals_d, key=lambda i: (-finals_d[i], i))
    keep_d = math.floor(alpha * beta * len(ranked_d) / 10000.0)
    final = set(ranked_nd[:keep_nd]) | set(ranked_d[:keep_d])
    return stage1, final, {**finals_nd, **finals_d}


class TestKeepCounts:
    def test_stage1_floor_with_minimum(self):
        assert stage1_keep_count(1000, 30) == 300
        assert stage1_keep_count(5, 10) == 1  # floor would starve the pool
        assert stage1_keep_count(0, 30) == 0
        assert stage1_keep_count(7, 100) == 7

    def test_stage2_floor(self):
        assert stage2_keep_count(300, 30) == 90
        assert stage2_keep_count(1, 10) == 0

    def test_detail_composed_rate(self):
        assert detail_keep_count(100, 30, 30) == 9
        assert detail_keep_count(100, 100, 100) == 100


class TestStage1:
    def test_thousand_items_alpha_30(self):
        """Full-sort oracle: 300 kept, min kept score >= max rejected."""
        items = [make_item(i) for i in range(1000)]
        kept, frag = stage1_filter(items, hash_qscore, 30)
        assert len(kept) == 300
        assert subset_is_top(frag.scores, frag.kept_ids)
        ranked = sorted(frag.scores, key=lambda i: (-frag.scores[i], i))
        assert frag.kept_ids == set(ranked[:300])

    def test_alpha_100_identity(self):
        items = [make_item(i) for i in range(17)]
        kept, _ = stage1_filter(items, hash_qscore, 100)
        assert {i.id for i in kept} == {i.id for i in items}

    def test_detail_items_bypass(self):
        items = [make_item(i, Category.DETAIL_DESCRIPTION) for i in range(10)]
        items += [make_item(100 + i) for i in range(10)]
        kept, frag = stage1_filter(items, hash_qscore, 30)
        detail_kept = [i for i in kept if i.category is Category.DETAIL_DESCRIPTION]
        assert len(detail_kept) == 10
        assert all(i.id in frag.bypassed_ids for i in detail_kept)
        assert all(i.id not in frag.scores for i in detail_kept)

    def test_conversation_scored_as_concatenated_group(self):
        captured = {}

        def spy(item):
            captured[item.id] = item.question_text()
            return 1.0

        items = [make_item(0, Category.CONVERSATION, turns=3)]
        stage1_filter(items, spy, 100)
        assert captured["item-00000"] == "q0 of 0\nq1 of 0\nq2 of 0"

    def test_scorer_failure_quarantines(self):
        def flaky(item):
            if item.id.endswith("3"):
                raise RuntimeError("backend out to lunch")
            return hash_qscore(item)

        items = [make_item(i) for i in range(10)]
        kept, frag = stage1_filter(items, flaky, 100)
        assert set(frag.quarantined) == {"item-00003"}
        assert len(kept) == 9


class TestStage2:
    def test_three_hundred_beta_30(self):
        items = [make_item(i) for i in range(300)]
        kept, frag = stage2_filter(items, hash_ascore, 30, 30)
        assert len(kept) == 90

    def test_conversation_average_of_turn_maxima(self):
        """Per-turn best scores [1, 2, 3] average to 2."""
        item = make_item(0, Category.CONVERSATION, turns=3)
        table = {0: [0.5, 1.0, 0.2], 1: [2.0, 1.5, 0.1], 2: [0.0, 2.5, 3.0]}
        kept, frag = stage2_filter([item], lambda it, t, a: table[t][it.answer_candidates[t].index(a)], 100, 100)
        assert frag.scores[item.id] == pytest.approx((1.0 + 2.0 + 3.0) / 3)
        assert frag.chosen[item.id] == [1, 0, 2]

    def test_argmax_tie_takes_lowest_index(self):
        """Scores [0.2, 0.9, 0.9] choose index 1."""
        item = make_item(0)
        scores = [0.2, 0.9, 0.9]
        _, frag = stage2_filter([item], lambda it, t, a: scores[it.answer_candidates[t].index(a)], 100, 100)
        assert frag.chosen[item.id] == [1]

    def test_missing_candidates_quarantined(self):
        good = make_item(0)
        bad = make_item(1, n_answers=2)
        kept, frag = stage2_filter([good, bad], hash_ascore, 100, 100, answers_per_item=3)
        assert "item-00001" in frag.quarantined
        assert [i.id for i in kept] == ["item-00000"]


class TestRunFiltration:
    def test_desk_corpus_composed_floors(self):
        """900 non-detail + 100 detail at 30/30: floor arithmetic oracle."""
        items = make_mixed_corpus(900, 100)
        config = FiltrationConfig(alpha_pct=30, beta_pct=30)
        curated, manifest = run_filtration(items, hash_qscore, hash_ascore, config)
        stage1_oracle, final_oracle, _ = oracle_two_stage(items, hash_qscore, hash_ascore, 30, 30)
        assert manifest.counts == {"input": 1000, "stage1": 370, "final": 90}
        assert manifest.counts["stage1"] == len(stage1_oracle)
        assert {r.id for r in curated} == final_oracle
        detail_kept = sum(1 for r in curated if r.category is Category.DETAIL_DESCRIPTION)
        assert detail_kept == 9

    def test_alpha_beta_100_identity_order_normalized(self):
        items = make_mixed_corpus(40, 10)
        config = FiltrationConfig(alpha_pct=100, beta_pct=100)
        curated, manifest = run_filtration(items, hash_qscore, hash_ascore, config)
        assert [r.id for r in curated] == sorted(i.id for i in items)
        assert manifest.counts == {"input": 50, "stage1": 50, "final": 50}

    def test_curated_records_carry_ranks_and_answers(self):
        items = make_mixed_corpus(50, 5)
        config = FiltrationConfig(alpha_pct=50, beta_pct=50)
        curated, manifest = run_filtration(items, hash_qscore, hash_ascore, config)
        by_id = {i.id: i for i in items}
        for record in curated:
            assert set(record.provenance) >= {"stage1_rank", "stage2_rank", "answer_score"}
            item = by_id[record.id]
            entry = next(e for e in manifest.items if e.record_id == record.id)
            for t, turn in enumerate(record.turns):
                assert turn.answer == item.answer_candidates[t][entry.chosen_answer_index[t]]

    def test_deterministic_manifest_bytes(self, tmp_path):
        items = make_mixed_corpus(120, 30)
        config = FiltrationConfig(alpha_pct=30, beta_pct=50)
        p1, p2 = tmp_path / "m1.jsonl", tmp_path / "m2.jsonl"
        run_filtration(items, hash_qscore, hash_ascore, config, manifest_path=p1)
        run_filtration(items, hash_qscore, hash_ascore, config, manifest_path=p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_manifest_roundtrip(self, tmp_path):
        items = make_mixed_corpus(30, 10)
        config = FiltrationConfig(alpha_pct=50, beta_pct=50)
        _, manifest = run_filtration(items, hash_qscore, hash_ascore, config,
                                     manifest_path=tmp_path / "m.jsonl")
        loaded = load_manifest(tmp_path / "m.jsonl")
        assert loaded.counts == manifest.counts
        assert loaded.thresholds == manifest.thresholds
        assert len(loaded.items) == len(manifest.items)
        assert loaded.kept_ids() == manifest.kept_ids()

    def test_quarantine_overflow_aborts_but_writes_manifest(self, tmp_path):
        items = [make_item(i) for i in range(100)]

        def broken(item):
            if int(item.id.split("-")[1]) < 5:
                raise RuntimeError("boom")
            return hash_qscore(item)

        path = tmp_path / "m.jsonl"
        with pytest.raises(QuarantineOverflowError):
            run_filtration(items, broken, hash_ascore, FiltrationConfig(30, 30), manifest_path=path)
        manifest = load_manifest(path)
        assert sum(1 for e in manifest.items if e.error) == 5

    def test_status_stream_emits_per_thousand(self):
        items = [make_item(i) for i in range(2500)]
        events = []
        run_filtration(items, hash_qscore, hash_ascore, FiltrationConfig(100, 100),
                       status=events.append)
        stage1_events = [e for e in events if e["stage"] == "stage1"]
        assert [e["scored"] for e in stage1_events] == [1000, 2000]

    def test_monotonicity_raising_kept_score_never_ejects(self):
        items = make_mixed_corpus(60, 0)
        config = FiltrationConfig(alpha_pct=50, beta_pct=50)
        curated, _ = run_filtration(items, hash_qscore, hash_ascore, config)
        target = curated[len(curated) // 2].id

        def boosted(item, turn, answer):
            base = hash_ascore(item, turn, answer)
            return base + 10.0 if item.id == target else base

        curated_boosted, _ = run_filtration(items, hash_qscore, boosted, config)
        assert target in {r.id for r in curated_boosted}


class TestDominanceSweep:
    def test_fifty_random_corpora(self):
        """Dominance, floor cardinalities, and oracle agreement item-for-item."""
        rng = np.random.default_rng(123)
        rates = [10, 30, 50, 100]
        for case in range(50):
            size = int(rng.integers(10, 2001))
            n_detail = int(rng.integers(0, size // 4 + 1))
            items = make_mixed_corpus(size - n_detail, n_detail, rng=rng)
            alpha = rates[int(rng.integers(0, 4))]
            beta = rates[int(rng.integers(0, 4))]
            config = FiltrationConfig(alpha_pct=alpha, beta_pct=beta)
            curated, manifest = run_filtration(items, hash_qscore, hash_ascore, config)

            stage1_oracle, final_oracle, finals = oracle_two_stage(
                items, hash_qscore, hash_ascore, alpha, beta
            )
            got_final = {r.id for r in curated}
            assert got_final == final_oracle, f"case {case}: selection disagrees with oracle"

            # cardinality formulas per pool
            n_nd = sum(1 for i in items if i.category is not Category.DETAIL_DESCRIPTION)
            n_d = size - n_nd
            expect_stage1 = (stage1_keep_count(n_nd, alpha) if n_nd else 0) + n_d
            assert manifest.counts["stage1"] == expect_stage1
            expect_final = stage2_keep_count(stage1_keep_count(n_nd, alpha), beta) if n_nd else 0
            expect_final += detail_keep_count(n_d, alpha, beta)
            assert manifest.counts["final"] == expect_final

            # dominance within each category pool
            category_of = {i.id: i.category for i in items}
            nd_finals = {
                i: s for i, s in finals.items()
                if category_of[i] is not Category.DETAIL_DESCRIPTION
            }
            d_finals = {i: s for i, s in finals.items() if i not in nd_finals}
            assert subset_is_top(nd_finals, got_final & set(nd_finals))
            assert subset_is_top(d_finals, got_final & set(d_finals))


def test_manifest_counts_invariant(tmp_path):
    manifest_items = make_mixed_corpus(20, 5)
    config = FiltrationConfig(alpha_pct=30, beta_pct=30)
    _, manifest = run_filtration(manifest_items, hash_qscore, hash_ascore, config)
    n, n1, n2 = manifest.counts["input"], manifest.counts["stage1"], manifest.counts["final"]
    assert n2 <= n1 <= n
    save_manifest(manifest, tmp_path / "ok.jsonl")
