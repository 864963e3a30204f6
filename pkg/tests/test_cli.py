"""CLI pipeline tests: stages compose, rerun deterministically, and fail
with the documented exit codes when prerequisites are missing."""

from __future__ import annotations

import hashlib
import json

import pytest

from vistruct import synth
from vistruct.cli import EXIT_BACKEND, EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from vistruct.corpus import save_corpus


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_config(tmp_path, **extra):
    config = {
        "seed": 7,
        "data_dir": str(tmp_path / "data"),
        "filtration": {"alpha_pct": 30.0, "beta_pct": 30.0},
        "embed": {"backend": "mock", "dim": 16},
        "chat": {"backend": "mock", "rewrite_style": "paraphrase"},
        "generate": {"fan_out": 3, "modality": "visual"},
        **extra,
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return path, tmp_path / "data"


def run(config_path, *argv):
    return main(["--config", str(config_path), *argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run the full pipeline once on a small mixed corpus."""
    tmp_path = tmp_path_factory.mktemp("cli")
    config_path, data_dir = write_config(tmp_path)

    assert run(config_path, "synth", "--count", "60") == EXIT_OK
    assert run(config_path, "generate", "--kind", "candidates") == EXIT_OK
    assert run(config_path, "generate", "--kind", "items") == EXIT_OK

    # simulated annotation pass stands in for the HTTP service here
    from vistruct.corpus import load_corpus

    q_samples = list(load_corpus(data_dir / "question_samples.jsonl", "question_sample"))
    a_samples = list(load_corpus(data_dir / "answer_samples.jsonl", "answer_sample"))
    rankings = synth.simulate_rankings(q_samples + a_samples, seed=7)
    save_corpus(rankings, data_dir / "rankings.jsonl")

    assert run(config_path, "pairs") == EXIT_OK
    assert run(config_path, "train", "--part", "both") == EXIT_OK
    assert run(config_path, "eval", "--part", "both") == EXIT_OK
    assert run(config_path, "filter") == EXIT_OK
    assert run(config_path, "align") == EXIT_OK
    assert run(config_path, "stats") == EXIT_OK
    return config_path, data_dir


class TestPipeline:
    def test_outputs_exist(self, pipeline):
        _, data_dir = pipeline
        for name in (
            "question_samples.jsonl", "answer_samples.jsonl",
            "question_pairs_train.jsonl", "answer_pairs_test.jsonl",
            "question_scorer.json", "answer_scorer.json",
            "filter_items.jsonl", "curated.jsonl", "run_manifest.jsonl",
            "aligned.jsonl", "align_audit.jsonl", "stats.json",
        ):
            assert (data_dir / name).exists(), name

    def test_retention_matches_floor_oracle(self, pipeline):
        """Composition of the stage oracles on the generated corpus."""
        from vistruct.corpus import Category, load_corpus
        from vistruct.filtration import detail_keep_count, stage1_keep_count, stage2_keep_count

        _, data_dir = pipeline
        items = list(load_corpus(data_dir / "filter_items.jsonl", "filter_item"))
        n_detail = sum(1 for i in items if i.category is Category.DETAIL_DESCRIPTION)
        n_nondetail = len(items) - n_detail
        expected = stage2_keep_count(stage1_keep_count(n_nondetail, 30.0), 30.0)
        expected += detail_keep_count(n_detail, 30.0, 30.0)
        curated = list(load_corpus(data_dir / "curated.jsonl", "instruction"))
        assert len(curated) == expected

    def test_aligned_preserves_every_record(self, pipeline):
        from vistruct.corpus import load_corpus

        _, data_dir = pipeline
        curated = list(load_corpus(data_dir / "curated.jsonl", "instruction"))
        aligned = list(load_corpus(data_dir / "aligned.jsonl", "instruction"))
        assert [r.id for r in aligned] == [r.id for r in curated]

    def test_eval_matches_library_accuracy(self, pipeline, capsys):
        config_path, data_dir = pipeline
        assert run(config_path, "eval", "--part", "question") == EXIT_OK
        line = [l for l in capsys.readouterr().out.splitlines() if '"stage": "eval"' in l][-1]
        reported = json.loads(line)

        from vistruct.cli import PipelineConfig, _image_index
        from vistruct import reward
        from vistruct.corpus import load_corpus
        from vistruct.genkit import MockEmbeddingClient

        featurizer = reward.Featurizer(MockEmbeddingClient(dim=16, seed=7))
        raw = json.loads(config_path.read_text())
        config = PipelineConfig(raw)
        pairs = list(load_corpus(data_dir / "question_pairs_test.jsonl", "preference_pair"))
        model = reward.load_checkpoint(data_dir / "question_scorer.json")
        expected = reward.eval_pairwise_accuracy(
            model, reward.featurize_pairs(pairs, featurizer, _image_index(config))
        )
        assert reported["pairwise_accuracy"] == pytest.approx(expected)

    def test_stage_rerun_reproduces_output_bits(self, pipeline):
        config_path, data_dir = pipeline
        curated, manifest = data_dir / "curated.jsonl", data_dir / "run_manifest.jsonl"
        before = (digest(curated), digest(manifest))
        curated.unlink()
        manifest.unlink()
        assert run(config_path, "filter") == EXIT_OK
        assert (digest(curated), digest(manifest)) == before

    def test_stats_reports_retention(self, pipeline):
        _, data_dir = pipeline
        stats = json.loads((data_dir / "stats.json").read_text())
        assert stats["records"] == stats["retention"]["final"]
        assert 0 < stats["retention"]["rate"] < 1

    def test_score_subcommand_emits_per_item_scores(self, pipeline):
        config_path, data_dir = pipeline
        assert run(config_path, "score", "--part", "question") == EXIT_OK
        assert run(config_path, "score", "--part", "answer") == EXIT_OK
        from vistruct.corpus import Category, load_corpus

        items = {i.id: i for i in load_corpus(data_dir / "filter_items.jsonl", "filter_item")}
        q_lines = [json.loads(l) for l in (data_dir / "question_scores.jsonl").read_text().splitlines()]
        n_nondetail = sum(1 for i in items.values() if i.category is not Category.DETAIL_DESCRIPTION)
        assert len(q_lines) == n_nondetail
        assert all(isinstance(line["score"], float) for line in q_lines)
        a_lines = [json.loads(l) for l in (data_dir / "answer_scores.jsonl").read_text().splitlines()]
        assert len(a_lines) == len(items)
        for line in a_lines:
            item = items[line["id"]]
            assert [len(turn) for turn in line["scores"]] == [len(t) for t in item.answer_candidates]

    def test_eval_reports_similarity_baseline(self, pipeline, capsys):
        config_path, _ = pipeline
        assert run(config_path, "eval", "--part", "answer") == EXIT_OK
        line = [l for l in capsys.readouterr().out.splitlines() if '"stage": "eval"' in l][-1]
        reported = json.loads(line)
        assert 0.0 <= reported["similarity_baseline_accuracy"] <= 1.0
        assert 0.0 <= reported["pairwise_accuracy"] <= 1.0


class TestErrors:
    def test_missing_prerequisite_is_data_error(self, tmp_path):
        config_path, _ = write_config(tmp_path)
        assert run(config_path, "filter") == EXIT_DATA

    def test_missing_config_file_is_data_error(self, tmp_path):
        assert main(["--config", str(tmp_path / "nope.json"), "stats"]) == EXIT_DATA

    def test_unknown_command_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as err:
            main(["frobnicate"])
        assert err.value.code == EXIT_USAGE

    def test_usage_error_for_bad_choice(self, tmp_path):
        config_path, _ = write_config(tmp_path)
        with pytest.raises(SystemExit) as err:
            main(["--config", str(config_path), "train", "--part", "nonsense"])
        assert err.value.code == EXIT_USAGE

    def test_unreachable_backend_is_backend_error(self, tmp_path):
        config_path, data_dir = write_config(
            tmp_path,
            chat={"backend": "http", "base_url": "http://127.0.0.1:9",
                  "max_retries": 0, "backoff_base": 0.0, "timeout": 0.2},
        )
        assert run(config_path, "synth", "--count", "5") == EXIT_OK
        assert run(config_path, "generate", "--kind", "items") == EXIT_BACKEND


class TestSeedPropagation:
    def test_different_seed_changes_split(self, tmp_path):
        config_path, data_dir = write_config(tmp_path)
        assert run(config_path, "synth", "--count", "30") == EXIT_OK
        assert run(config_path, "generate", "--kind", "candidates") == EXIT_OK

        from vistruct.corpus import load_corpus

        q_samples = list(load_corpus(data_dir / "question_samples.jsonl", "question_sample"))
        a_samples = list(load_corpus(data_dir / "answer_samples.jsonl", "answer_sample"))
        rankings = synth.simulate_rankings(q_samples + a_samples, seed=7)
        save_corpus(rankings, data_dir / "rankings.jsonl")
        assert run(config_path, "pairs") == EXIT_OK
        first = digest(data_dir / "question_pairs_train.jsonl")
        assert main(["--config", str(config_path), "--seed", "8", "pairs"]) == EXIT_OK
        second = digest(data_dir / "question_pairs_train.jsonl")
        assert first != second
