"""Command-line entry point: ``mragplan {annotate,plan,run,eval,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Sequence

from .annotator import build_training_set
from .backends import LatencyRecorder
from .config import RunConfig
from .core import VqaExample, load_dataset, read_jsonl, write_jsonl
from .errors import ConfigError, JudgeFailed, MisalignedScores, MragError
from .evaluator import ItemScore, Report, aggregate, judge_answer, token_accuracy
from .executor import ExecutorConfig, PipelineResult, execute
from .planner import PlanDecision, plan

log = logging.getLogger("mragplan")


class CommandError(Exception):
    """Fatal error reported to the user; exit status 1."""


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _load(config: RunConfig) -> list[VqaExample]:
    if not config.dataset_path:
        raise CommandError("no dataset given (--dataset or 'dataset' in config)")
    try:
        examples = load_dataset(config.dataset_path)
    except (OSError, ValueError, KeyError) as exc:
        raise CommandError(f"cannot read dataset {config.dataset_path}: {exc}") from exc
    if not examples:
        raise CommandError(f"dataset {config.dataset_path} is empty")
    return examples


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset_id(config: RunConfig) -> str:
    return config.dataset_id or (Path(config.dataset_path).stem if config.dataset_path else "dataset")


def cmd_annotate(config: RunConfig) -> int:
    examples = _load(config)
    missing = [ex.id for ex in examples if not ex.answer]
    if missing:
        raise CommandError(f"annotation needs gold answers; missing for {missing[:5]}")
    backends = config.build_backends()
    result = build_training_set(
        examples, config.caps, backends, config.seed, threshold=config.threshold, workers=config.workers
    )
    out = _out_dir(config)
    write_jsonl(out / "train.jsonl", result.records)
    write_jsonl(out / "annotations.jsonl", (a.to_dict() for a in result.annotations))
    _write_json(out / "stats.json", result.stats.to_dict())
    s = result.stats
    log.info("annotated %d: retained %d, excluded %d, cap-discarded %d", s.n_input, s.n_retained, s.n_excluded, s.n_cap_discarded)
    return 0


def _plans(config: RunConfig, examples: list[VqaExample], backends) -> list[PlanDecision]:
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(lambda ex: plan(ex, backends.agent), examples))


def cmd_plan(config: RunConfig) -> int:
    examples = sorted(_load(config), key=lambda e: e.id)
    backends = config.build_backends()
    decisions = _plans(config, examples, backends)
    write_jsonl(_out_dir(config) / "plans.jsonl", (d.to_dict(ex.id) for ex, d in zip(examples, decisions)))
    return 0


def cmd_run(config: RunConfig) -> int:
    examples = sorted(_load(config), key=lambda e: e.id)
    backends = config.build_backends()
    decisions = _plans(config, examples, backends)
    exec_cfg = ExecutorConfig(top_k_image=config.top_k_image, top_k_text=config.top_k_text)
    if backends.all_mock:
        # Fixture runs carry no real latency; a frozen clock keeps outputs byte-identical.
        exec_cfg.clock = lambda: 0.0
    recorder = LatencyRecorder()
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        results = list(
            pool.map(lambda pair: execute(pair[0], pair[1].category, backends, exec_cfg, recorder), zip(examples, decisions))
        )
    out = _out_dir(config)
    write_jsonl(out / "plans.jsonl", (d.to_dict(ex.id) for ex, d in zip(examples, decisions)))
    write_jsonl(out / "results.jsonl", (r.to_dict() for r in results))
    totals = recorder.totals()
    log.info("ran %d items; searches %s", len(results), dict(sorted(totals.counts.items())))
    return 0


def _read_results(path: Path) -> list[PipelineResult]:
    if not path.exists():
        raise CommandError(f"results file {path} not found (run `mragplan run` first)")
    try:
        return [PipelineResult.from_dict(row) for row in read_jsonl(path)]
    except (ValueError, KeyError) as exc:
        raise CommandError(f"cannot read results {path}: {exc}") from exc


def _read_scores(path: Path) -> dict[str, ItemScore]:
    scores = {}
    for row in read_jsonl(path):
        scores[str(row["id"])] = ItemScore(float(row["llm_score"]), float(row["token_accuracy"]))
    return scores


def cmd_eval(config: RunConfig, results_path: str | None = None, scores_path: str | None = None) -> int:
    out = _out_dir(config)
    results = _read_results(Path(results_path) if results_path else out / "results.jsonl")
    if not results:
        raise CommandError("results file is empty")
    if scores_path:
        try:
            scores = _read_scores(Path(scores_path))
        except (OSError, ValueError, KeyError) as exc:
            raise CommandError(f"cannot read scores {scores_path}: {exc}") from exc
    else:
        examples = {ex.id: ex for ex in _load(config)}
        backends = config.build_backends()

        def score(r: PipelineResult) -> tuple[str, ItemScore] | None:
            ex = examples.get(r.example_id)
            if ex is None or not ex.answer:
                return None
            generated = r.answer or "(no answer)"
            try:
                llm = judge_answer(
                    backends.judge, ex.question, ex.answer, generated, key=f"judge:{ex.id}", scale=config.score_scale
                )
            except JudgeFailed as exc:
                log.warning("%s: %s; scoring as 0", ex.id, exc)
                llm = 0.0
            try:
                acc = token_accuracy(r.answer, ex.answer)
            except ValueError:
                log.warning("%s: reference answer has no tokens; token accuracy set to 0", ex.id)
                acc = 0.0
            return ex.id, ItemScore(llm, acc)

        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            scored = [s for s in pool.map(score, results) if s is not None]
        scores = dict(scored)
        write_jsonl(out / "scores.jsonl", ({"id": k, **v.to_dict()} for k, v in sorted(scores.items())))
    report = aggregate(results, scores, config.latency, dataset_id=_dataset_id(config))
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "report.md").write_text(report.to_markdown(), encoding="utf-8")
    log.info("mean LLM score %.2f over %d items", report.mean_llm_score, report.n_items)
    return 0


def cmd_report(config: RunConfig, report_path: str | None = None) -> int:
    out = Path(config.output_dir)
    path = Path(report_path) if report_path else out / "report.json"
    try:
        report = Report.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (OSError, ValueError, KeyError) as exc:
        raise CommandError(f"cannot read report {path}: {exc}") from exc
    (path.parent / "report.md").write_text(report.to_markdown(), encoding="utf-8")
    print(report.to_markdown(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--dataset", help="JSON Lines dataset")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="worker pool size")
    common.add_argument("--seed", type=int, help="subsampling seed")
    common.add_argument("--mock", action="store_true", help="force every backend onto fixtures")
    common.add_argument("--fixtures", help="fixture file used by mock backends")
    common.add_argument("--top-k", type=int, dest="top_k", help="retrieval depth for i2i and t2t")
    common.add_argument("--threshold", type=float, help="judge score counted as correct (1-5 scale)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mragplan", description="Dynamic mRAG planning pipeline for VQA")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("annotate", parents=[common], help="build agent training data")
    sub.add_parser("plan", parents=[common], help="predict categories only")
    sub.add_parser("run", parents=[common], help="plan and execute each item")
    ev = sub.add_parser("eval", parents=[common], help="judge answers and write the report")
    ev.add_argument("--results", help="results.jsonl (default: OUT/results.jsonl)")
    ev.add_argument("--scores", help="precomputed per-item scores (JSON Lines: id, llm_score, token_accuracy)")
    rp = sub.add_parser("report", parents=[common], help="re-render report.md from report.json")
    rp.add_argument("--report", help="report.json (default: OUT/report.json)")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    if args.dataset:
        config.dataset_path = args.dataset
    if args.out:
        config.output_dir = args.out
    if args.workers is not None:
        config.workers = args.workers
    if args.seed is not None:
        config.seed = args.seed
    if args.fixtures:
        config.fixtures = args.fixtures
    if args.mock:
        config.mock = True
    if args.top_k is not None:
        config.top_k_image = config.top_k_text = args.top_k
    if args.threshold is not None:
        config.threshold = args.threshold
    if config.workers < 1:
        raise ConfigError("--workers must be >= 1")
    return config


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        config = config_from_args(args)
        if args.command == "annotate":
            return cmd_annotate(config)
        if args.command == "plan":
            return cmd_plan(config)
        if args.command == "run":
            return cmd_run(config)
        if args.command == "eval":
            return cmd_eval(config, args.results, args.scores)
        return cmd_report(config, args.report)
    except MisalignedScores as exc:
        print(f"error: MISALIGNED_SCORES: {exc}", file=sys.stderr)
        return 1
    except (CommandError, ConfigError, MragError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
