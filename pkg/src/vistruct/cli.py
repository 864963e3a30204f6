"""Pipeline entry point.

Subcommands mirror the pipeline stages: generate, serve-annotate, pairs,
train, eval, score, filter, align, stats. Each stage reads and writes the
line-delimited corpus formats, plus a ``<output>.meta.json`` sidecar with
input digests, config digest, counts, and wall time so reruns are auditable.
Settings come from a JSON config file; flags win over config values.

Exit codes: 0 success, 1 usage, 2 data/validation, 3 backend failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path
from typing import Any

from . import filtration, generate, llmalign, prefs, reward, synth
from .annotate import TaskStore, create_app
from .corpus import (
    AnswerSample,
    Category,
    FilterItem,
    InstructionRecord,
    Part,
    QuestionSample,
    Ranking,
    load_corpus,
    save_corpus,
    split_dataset,
)
from .errors import ClientError, StageInputError, VistructError
from .genkit.clients import build_chat_client, build_embedding_client
from .reward import Featurizer

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3

DEFAULT_PATHS = {
    "seed_corpus": "seed_corpus.jsonl",
    "question_samples": "question_samples.jsonl",
    "answer_samples": "answer_samples.jsonl",
    "rankings": "rankings.jsonl",
    "question_pairs_train": "question_pairs_train.jsonl",
    "question_pairs_test": "question_pairs_test.jsonl",
    "answer_pairs_train": "answer_pairs_train.jsonl",
    "answer_pairs_test": "answer_pairs_test.jsonl",
    "question_checkpoint": "question_scorer.json",
    "answer_checkpoint": "answer_scorer.json",
    "question_report": "question_train_report.json",
    "answer_report": "answer_train_report.json",
    "filter_items": "filter_items.jsonl",
    "curated": "curated.jsonl",
    "manifest": "run_manifest.jsonl",
    "aligned": "aligned.jsonl",
    "audit": "align_audit.jsonl",
    "stats": "stats.json",
}

DEFAULT_CONFIG: dict[str, Any] = {
    "seed": 0,
    "jobs": 1,
    "data_dir": "data",
    "paths": {},
    "filtration": {"alpha_pct": 30.0, "beta_pct": 30.0, "answers_per_item": 3},
    "train": {},
    "split": {"question_train_count": None, "answer_train_count": None},
    "chat": {"backend": "mock", "rewrite_style": "echo"},
    "embed": {"backend": "mock", "dim": 64},
    "generate": {"fan_out": 3, "modality": "visual", "temperature": 0.7},
}


class PipelineConfig:
    """Resolved configuration: file values under defaults, flags on top."""

    def __init__(self, raw: dict[str, Any]):
        self.raw = raw
        self.seed = int(raw.get("seed", 0))
        self.jobs = int(raw.get("jobs", 1))
        self.data_dir = Path(raw.get("data_dir", "data"))

    def path(self, key: str) -> Path:
        override = self.raw.get("paths", {}).get(key)
        return Path(override) if override else self.data_dir / DEFAULT_PATHS[key]

    def section(self, key: str) -> dict[str, Any]:
        merged = dict(DEFAULT_CONFIG.get(key, {}))
        merged.update(self.raw.get(key, {}))
        return merged

    def digest(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_config(path: str | None, overrides: argparse.Namespace) -> PipelineConfig:
    raw = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if path:
        file_path = Path(path)
        if not file_path.exists():
            raise StageInputError(f"config file not found: {path}")
        loaded = json.loads(file_path.read_text(encoding="utf-8"))
        _deep_update(raw, loaded)
    if getattr(overrides, "seed", None) is not None:
        raw["seed"] = overrides.seed
    if getattr(overrides, "jobs", None) is not None:
        raw["jobs"] = overrides.jobs
    # stochastic components inherit the single global seed unless pinned
    raw.setdefault("chat", {}).setdefault("seed", raw["seed"])
    raw.setdefault("embed", {}).setdefault("seed", raw["seed"])
    config = PipelineConfig(raw)
    config.data_dir.mkdir(parents=True, exist_ok=True)
    return config


def _deep_update(base: dict, update: dict) -> None:
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value


def _require_inputs(*paths: Path) -> None:
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise StageInputError(f"missing prerequisite stage output(s): {', '.join(missing)}")


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_stage_meta(
    out_path: Path,
    config: PipelineConfig,
    inputs: list[Path],
    counts: dict[str, int],
    started: float,
) -> None:
    meta = {
        "inputs": {str(p): _file_digest(p) for p in inputs if p.exists()},
        "config_digest": config.digest(),
        "counts": counts,
        "wall_time_s": round(time.monotonic() - started, 3),
    }
    Path(str(out_path) + ".meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


# -- stages -----------------------------------------------------------------


def cmd_generate(config: PipelineConfig, args: argparse.Namespace) -> int:
    started = time.monotonic()
    seed_path = config.path("seed_corpus")
    _require_inputs(seed_path)
    records = list(load_corpus(seed_path, InstructionRecord.KIND))
    gen_cfg = config.section("generate")
    chat_cfg = config.section("chat")
    client = build_chat_client(chat_cfg)
    generators = [(client, gen_cfg.get("modality", "visual"))]
    settings = generate.GenerationSettings(
        fan_out=int(gen_cfg.get("fan_out", 3)),
        temperature=float(gen_cfg.get("temperature", 0.7)),
        model=chat_cfg.get("model", "generator"),
    )

    if args.kind == "candidates":
        q_samples, q_report = generate.generate_question_samples(records, generators, settings)
        a_samples, a_report = generate.generate_answer_samples(records, generators, settings)
        q_path, a_path = config.path("question_samples"), config.path("answer_samples")
        save_corpus(q_samples, q_path)
        save_corpus(a_samples, a_path)
        counts = {
            "question_samples": len(q_samples),
            "answer_samples": len(a_samples),
            "question_refusals": q_report.refusals_dropped,
            "answer_refusals": a_report.refusals_dropped,
        }
        write_stage_meta(q_path, config, [seed_path], counts, started)
        _emit({"stage": "generate", **counts})
    else:
        items, report = generate.generate_filter_items(
            records,
            generators,
            answers_per_item=int(config.section("filtration").get("answers_per_item", 3)),
            settings=settings,
            seed=config.seed,
        )
        out = config.path("filter_items")
        save_corpus(items, out)
        counts = {"filter_items": len(items), "refusals": report.refusals_dropped,
                  "dropped": report.samples_dropped}
        write_stage_meta(out, config, [seed_path], counts, started)
        _emit({"stage": "generate", **counts})
    return EXIT_OK


def cmd_serve_annotate(config: PipelineConfig, args: argparse.Namespace) -> int:
    import uvicorn

    data_dir = Path(args.data_dir) if args.data_dir else config.data_dir / "annotate"
    store = TaskStore(data_dir, seed=config.seed)
    q_path, a_path = config.path("question_samples"), config.path("answer_samples")
    question_samples = list(load_corpus(q_path, QuestionSample.KIND)) if q_path.exists() else []
    answer_samples = list(load_corpus(a_path, AnswerSample.KIND)) if a_path.exists() else []
    created = store.load_samples(question_samples, answer_samples)
    _emit({"stage": "serve-annotate", "tasks_created": created, **store.progress()})
    app = create_app(store, static_dir=args.static_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def _load_samples(config: PipelineConfig) -> list:
    q_path, a_path = config.path("question_samples"), config.path("answer_samples")
    _require_inputs(q_path, a_path)
    samples: list = list(load_corpus(q_path, QuestionSample.KIND))
    samples += list(load_corpus(a_path, AnswerSample.KIND))
    return samples


def _default_train_count(part: Part, n: int) -> int:
    # 7/8 for questions and 5/6 for answers reproduce the reference
    # 700/100 and 800/160 partitions at their collection sizes.
    fraction = 7 / 8 if part is Part.QUESTION else 5 / 6
    return int(round(n * fraction))


def cmd_pairs(config: PipelineConfig, args: argparse.Namespace) -> int:
    started = time.monotonic()
    rankings_path = config.path("rankings")
    _require_inputs(rankings_path)
    samples = _load_samples(config)
    rankings = list(load_corpus(rankings_path, Ranking.KIND))

    split_cfg = config.section("split")
    outputs = {}
    for part, key in ((Part.QUESTION, "question"), (Part.ANSWER, "answer")):
        if part is Part.QUESTION:
            part_samples = [s for s in samples if isinstance(s, QuestionSample)]
        else:
            part_samples = [s for s in samples if isinstance(s, AnswerSample)]
        configured = split_cfg.get(f"{key}_train_count")
        train_count = int(configured) if configured is not None else _default_train_count(part, len(part_samples))
        train_samples, test_samples = split_dataset(part_samples, train_count, config.seed)
        for split_name, subset in (("train", train_samples), ("test", test_samples)):
            result = prefs.build_pref_datasets(subset, rankings, allow_orphan_rankings=True)
            pairs = result.question_pairs if part is Part.QUESTION else result.answer_pairs
            out = config.path(f"{key}_pairs_{split_name}")
            save_corpus(pairs, out)
            outputs[f"{key}_{split_name}"] = len(pairs)
    counts = dict(outputs)
    write_stage_meta(config.path("question_pairs_train"), config,
                     [rankings_path, config.path("question_samples"), config.path("answer_samples")],
                     counts, started)
    _emit({"stage": "pairs", **counts})
    return EXIT_OK


def _image_index(config: PipelineConfig) -> dict:
    images = {}
    for key, kind in (
        ("seed_corpus", InstructionRecord.KIND),
        ("question_samples", QuestionSample.KIND),
        ("answer_samples", AnswerSample.KIND),
        ("filter_items", FilterItem.KIND),
    ):
        path = config.path(key)
        if path.exists():
            for record in load_corpus(path, kind):
                images[record.image.id] = record.image
    return images


def _featurized_pairs(config: PipelineConfig, part: Part, split_name: str, featurizer: Featurizer):
    key = "question" if part is Part.QUESTION else "answer"
    path = config.path(f"{key}_pairs_{split_name}")
    _require_inputs(path)
    pairs = list(load_corpus(path, "preference_pair"))
    if not pairs:
        raise StageInputError(f"no pairs in {path}")
    return reward.featurize_pairs(pairs, featurizer, _image_index(config))


def cmd_train(config: PipelineConfig, args: argparse.Namespace) -> int:
    started = time.monotonic()
    embedder = build_embedding_client(config.section("embed"))
    featurizer = Featurizer(embedder)
    train_section = config.section("train")
    train_section.setdefault("seed", config.seed)
    train_cfg = reward.TrainConfig(**train_section)
    parts = [Part.QUESTION, Part.ANSWER] if args.part == "both" else [Part(args.part)]
    for part in parts:
        key = "question" if part is Part.QUESTION else "answer"
        train_pairs = _featurized_pairs(config, part, "train", featurizer)
        test_pairs = _featurized_pairs(config, part, "test", featurizer)
        featurizer_id = train_pairs[0][0].featurizer_id
        model, report = reward.train(train_pairs, train_cfg, part, featurizer_id, holdout=test_pairs)
        ckpt = config.path(f"{key}_checkpoint")
        reward.save_checkpoint(model, ckpt, train_config_digest=train_cfg.digest())
        report_path = config.path(f"{key}_report")
        report_path.write_text(json.dumps(report.to_obj(), indent=2) + "\n", encoding="utf-8")
        final = report.epochs[-1]
        counts = {"train_pairs": len(train_pairs), "test_pairs": len(test_pairs)}
        write_stage_meta(ckpt, config, [config.path(f"{key}_pairs_train")], counts, started)
        _emit({
            "stage": "train",
            "part": part.value,
            "final_loss": final.train_loss,
            "holdout_accuracy": final.holdout_accuracy,
        })
    return EXIT_OK


def cmd_eval(config: PipelineConfig, args: argparse.Namespace) -> int:
    embedder = build_embedding_client(config.section("embed"))
    featurizer = Featurizer(embedder)
    images = _image_index(config)
    parts = [Part.QUESTION, Part.ANSWER] if args.part == "both" else [Part(args.part)]
    for part in parts:
        key = "question" if part is Part.QUESTION else "answer"
        ckpt_path = config.path(f"{key}_checkpoint")
        pairs_path = config.path(f"{key}_pairs_test")
        _require_inputs(ckpt_path, pairs_path)
        model = reward.load_checkpoint(ckpt_path)
        raw_pairs = list(load_corpus(pairs_path, "preference_pair"))
        featurized = reward.featurize_pairs(raw_pairs, featurizer, images)
        accuracy = reward.eval_pairwise_accuracy(model, featurized)
        baseline_hits = 0.0
        for pair in raw_pairs:
            image = images[pair.image_id]
            sw = reward.baseline_similarity_score(embedder, image, pair.winner)
            sl = reward.baseline_similarity_score(embedder, image, pair.loser)
            baseline_hits += 1.0 if sw > sl else (0.5 if sw == sl else 0.0)
        _emit({
            "stage": "eval",
            "part": part.value,
            "pairwise_accuracy": accuracy,
            "similarity_baseline_accuracy": baseline_hits / len(raw_pairs),
            "pairs": len(raw_pairs),
        })
    return EXIT_OK


def cmd_score(config: PipelineConfig, args: argparse.Namespace) -> int:
    items_path = config.path("filter_items")
    _require_inputs(items_path)
    embedder = build_embedding_client(config.section("embed"))
    featurizer = Featurizer(embedder)
    part = Part(args.part)
    key = "question" if part is Part.QUESTION else "answer"
    ckpt_path = config.path(f"{key}_checkpoint")
    _require_inputs(ckpt_path)
    model = reward.load_checkpoint(ckpt_path)
    out_path = Path(args.out) if args.out else config.data_dir / f"{key}_scores.jsonl"
    count = 0
    with out_path.open("w", encoding="utf-8") as handle:
        for item in load_corpus(items_path, FilterItem.KIND):
            if part is Part.QUESTION:
                if item.category is Category.DETAIL_DESCRIPTION:
                    continue
                features = featurizer.featurize_question(item.image, item.question_text())
                payload = {"id": item.id, "part": part.value, "score": reward.score(model, features)}
            else:
                scores = [
                    [
                        reward.score(model, featurizer.featurize_answer(item.image, item.questions[t], answer))
                        for answer in turn
                    ]
                    for t, turn in enumerate(item.answer_candidates)
                ]
                payload = {"id": item.id, "part": part.value, "scores": scores}
            handle.write(json.dumps(payload, sort_keys=True) + "\n")
            count += 1
    _emit({"stage": "score", "part": part.value, "items": count, "out": str(out_path)})
    return EXIT_OK


def cmd_filter(config: PipelineConfig, args: argparse.Namespace) -> int:
    started = time.monotonic()
    items_path = config.path("filter_items")
    q_ckpt, a_ckpt = config.path("question_checkpoint"), config.path("answer_checkpoint")
    _require_inputs(items_path, q_ckpt, a_ckpt)
    items = list(load_corpus(items_path, FilterItem.KIND))
    embedder = build_embedding_client(config.section("embed"))
    featurizer = Featurizer(embedder)
    question_model = reward.load_checkpoint(q_ckpt)
    answer_model = reward.load_checkpoint(a_ckpt)
    question_scorer, answer_scorer = filtration.make_reward_scorers(
        question_model, answer_model, featurizer
    )
    filt_cfg = config.section("filtration")
    fconfig = filtration.FiltrationConfig(
        alpha_pct=float(filt_cfg.get("alpha_pct", 30.0)),
        beta_pct=float(filt_cfg.get("beta_pct", 30.0)),
        answers_per_item=int(filt_cfg.get("answers_per_item", 3)),
    )
    manifest_path = config.path("manifest")
    curated, manifest = filtration.run_filtration(
        items,
        question_scorer,
        answer_scorer,
        fconfig,
        seed=config.seed,
        checkpoint_digests={
            "question": reward.checkpoint_digest(q_ckpt),
            "answer": reward.checkpoint_digest(a_ckpt),
        },
        manifest_path=manifest_path,
        status=lambda payload: print(json.dumps(payload, sort_keys=True), file=sys.stderr),
    )
    curated_path = config.path("curated") if not args.out else Path(args.out)
    save_corpus(curated, curated_path)
    write_stage_meta(curated_path, config, [items_path, q_ckpt, a_ckpt], manifest.counts, started)
    _emit({"stage": "filter", **manifest.counts, "manifest": str(manifest_path)})
    return EXIT_OK


def cmd_align(config: PipelineConfig, args: argparse.Namespace) -> int:
    started = time.monotonic()
    curated_path = config.path("curated")
    _require_inputs(curated_path)
    records = list(load_corpus(curated_path, InstructionRecord.KIND))
    chat_cfg = config.section("chat")
    client = build_chat_client(chat_cfg)
    # mock runs pin the audit timestamps so reruns are byte-identical
    clock = (lambda: "1970-01-01T00:00:00+00:00") if chat_cfg.get("backend") == "mock" else llmalign.iso_now
    aligned, summary = llmalign.align_corpus(
        records,
        client,
        config.path("audit"),
        parallelism=config.jobs,
        clock=clock,
    )
    out = config.path("aligned") if not args.out else Path(args.out)
    save_corpus(aligned, out)
    counts = {"records": len(aligned), **summary.to_obj()}
    write_stage_meta(out, config, [curated_path], counts, started)
    _emit({"stage": "align", **counts})
    return EXIT_OK


def cmd_stats(config: PipelineConfig, args: argparse.Namespace) -> int:
    target = Path(args.corpus) if args.corpus else config.path("aligned")
    _require_inputs(target)
    by_category: dict[str, int] = {}
    turns_total = 0
    records = 0
    for record in load_corpus(target, InstructionRecord.KIND):
        by_category[record.category.value] = by_category.get(record.category.value, 0) + 1
        turns_total += len(record.turns)
        records += 1
    stats: dict[str, Any] = {
        "corpus": str(target),
        "records": records,
        "turns": turns_total,
        "by_category": {k: by_category[k] for k in sorted(by_category)},
    }
    manifest_path = config.path("manifest")
    if manifest_path.exists():
        manifest = filtration.load_manifest(manifest_path)
        n = manifest.counts.get("input", 0)
        stats["retention"] = {
            **manifest.counts,
            "rate": (manifest.counts.get("final", 0) / n) if n else None,
        }
    out = config.path("stats")
    out.write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit(stats)
    return EXIT_OK


def cmd_synth(config: PipelineConfig, args: argparse.Namespace) -> int:
    """Build a synthetic seed corpus (testing and demos)."""
    records = synth.make_seed_corpus(
        args.count,
        seed=config.seed,
        detail_fraction=args.detail_fraction,
        conversation_fraction=args.conversation_fraction,
    )
    out = config.path("seed_corpus") if not args.out else Path(args.out)
    count = save_corpus(records, out)
    _emit({"stage": "synth", "records": count, "out": str(out)})
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> _Parser:
    parser = _Parser(prog="vistruct", description=__doc__)
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="global seed override")
    parser.add_argument("--jobs", type=int, help="intra-stage parallelism")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate candidate samples or filter items")
    p.add_argument("--kind", choices=["candidates", "items"], default="candidates")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("serve-annotate", help="run the annotation service")
    p.add_argument("--port", type=int, default=8410)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--data-dir", default=None)
    p.add_argument("--static-dir", default=None, help="built UI bundle to serve")
    p.set_defaults(func=cmd_serve_annotate)

    p = sub.add_parser("pairs", help="build preference pairs from rankings")
    p.set_defaults(func=cmd_pairs)

    p = sub.add_parser("train", help="train the question/answer scorers")
    p.add_argument("--part", choices=["question", "answer", "both"], default="both")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="pairwise accuracy plus similarity baseline")
    p.add_argument("--part", choices=["question", "answer", "both"], default="both")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="score filter items with a checkpoint")
    p.add_argument("--part", choices=["question", "answer"], required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("filter", help="two-stage filtration")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("align", help="rewrite/review style alignment")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("stats", help="summarize a corpus and retention")
    p.add_argument("--corpus", default=None)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("synth", help="build a synthetic seed corpus")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--detail-fraction", type=float, default=0.1)
    p.add_argument("--conversation-fraction", type=float, default=0.3)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config, args)
        return args.func(config, args)
    except ClientError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except VistructError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
