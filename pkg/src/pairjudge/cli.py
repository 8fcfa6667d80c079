"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from pairjudge.backend import BackendConfigError, BackendError
from pairjudge.config import ConfigError, load_config
from pairjudge.dataset import DatasetError, TaskKind, scan_dataset
from pairjudge.orchestrator import (
    GENERATIONS,
    SNAPSHOT,
    GenerationStore,
    RunStateError,
    load_samples,
    read_verdicts,
    run_evaluation,
    run_generation,
)
from pairjudge.prompts import PromptError, build_judge_prompt, build_summarization_prompt, context_text
from pairjudge.report import (
    agreement_metrics,
    bootstrap_ci,
    join_for_agreement,
    load_human_verdicts,
    position_flip_rate,
    render_table,
    win_rates,
)

logger = logging.getLogger("pairjudge")

FORMAT_EXT = {"md": "md", "markdown": "md", "csv": "csv", "json": "json"}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="run config file (YAML/JSON) or 'demo'")
    p.add_argument("--dataset", help="use only this dataset file (needs --task)")
    p.add_argument("--task", help="task kind for --dataset: question, query or dialog")
    p.add_argument("--models", help="comma-separated backend names to evaluate")
    p.add_argument("--target-model")
    p.add_argument("--judge-model")
    p.add_argument("--seed", type=int)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--cache-dir")
    p.add_argument("--out", help="run output directory")
    p.add_argument("--resume", action="store_true", help="continue an interrupted run")


def build_parser() -> argparse.ArgumentParser:
    parser = Parser(prog="pairjudge", description="Pairwise LLM-as-judge evaluation of summarization models.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    ingest = sub.add_parser("ingest", help="dataset utilities")
    ingest_sub = ingest.add_subparsers(dest="action", required=True, parser_class=Parser)
    validate = ingest_sub.add_parser("validate", help="check a JSONL dataset against a task schema")
    validate.add_argument("--task", required=True)
    validate.add_argument("path")

    prompts = sub.add_parser("prompts", help="prompt utilities")
    prompts_sub = prompts.add_subparsers(dest="action", required=True, parser_class=Parser)
    preview = prompts_sub.add_parser("preview", help="print the rendered prompts for one sample")
    preview.add_argument("--config", required=True)
    preview.add_argument("--sample", required=True)
    preview.add_argument("--dataset", dest="dataset_name", help="dataset name if the id is ambiguous")
    preview.add_argument("--out")

    for name, text in (("generate", "stage 1: produce summaries"), ("judge", "stage 2: pairwise judging")):
        _add_run_flags(sub.add_parser(name, help=text))

    report = sub.add_parser("report", help="win-rate tables and figures for a run")
    report.add_argument("--run", required=True)
    report.add_argument("--format", default="md", choices=sorted(FORMAT_EXT))
    report.add_argument("--seed", type=int, default=0, help="bootstrap seed")
    report.add_argument("--resamples", type=int, default=1000)
    report.add_argument("--level", type=float, default=0.95)

    agreement = sub.add_parser("agreement", help="judge vs human agreement")
    agreement.add_argument("--run", required=True)
    agreement.add_argument("--human", required=True)
    agreement.add_argument("--format", default="md", choices=sorted(FORMAT_EXT))
    return parser


def _overrides(args) -> dict:
    keys = ("dataset", "task", "models", "target_model", "judge_model", "seed", "parallelism", "cache_dir", "out")
    return {k: getattr(args, k, None) for k in keys}


def cmd_ingest(args) -> int:
    task = TaskKind.parse(args.task)
    samples, problems = scan_dataset(args.path, task)
    print(f"{args.path}: {len(samples)} valid records ({task.value})")
    for p in problems:
        print(f"  {p}")
    if not samples and not problems:
        logger.warning("dataset %s is empty", args.path)
    return 1 if problems else 0


def cmd_prompts(args) -> int:
    config = load_config(args.config, {"out": args.out})
    sample_sets = load_samples(config)
    matches = [(name, ss.get(args.sample)) for name, ss in sample_sets.items()
               if (args.dataset_name in (None, name)) and args.sample in ss.ids]
    if not matches:
        raise UsageError(f"sample {args.sample!r} not found")
    if len(matches) > 1:
        raise UsageError(f"sample {args.sample!r} exists in several datasets; pass --dataset")
    ds_name, sample = matches[0]
    store = GenerationStore.from_journal(Path(config.output_dir) / GENERATIONS)
    print(f"=== summarization prompt ({ds_name}/{sample.id}, {sample.task.value}) ===")
    print(build_summarization_prompt(sample, config.instructions).rendered)
    context = context_text(sample, config.instructions.separator)
    target = store.get(ds_name, sample.id, config.target_model)
    for model in config.model_names:
        if model == config.target_model:
            continue
        cand = store.get(ds_name, sample.id, model)
        a1 = cand.summary if cand and cand.ok else "<candidate summary>"
        a2 = target.summary if target and target.ok else "<target summary>"
        print(f"\n=== judge prompt, candidate first ({model} vs {config.target_model}) ===")
        print(build_judge_prompt(config.judge_template, context, a1, a2).rendered)
    return 0


def cmd_generate(args) -> int:
    config = load_config(args.config, _overrides(args))
    store = run_generation(config, resume=args.resume)
    errored = len(store.errored)
    print(f"{len(store)} generation entries in {config.output_dir} ({errored} errored)")
    return 0


def cmd_judge(args) -> int:
    config = load_config(args.config, _overrides(args))
    result = run_evaluation(config, resume=args.resume)
    print(f"{len(result.records)} comparison records in {config.output_dir} ({len(result.skips)} skipped)")
    return 0


def cmd_report(args) -> int:
    from pairjudge.figures import plot_win_rates

    run_dir = Path(args.run)
    records = read_verdicts(run_dir)
    datasets = candidates = None
    snapshot = run_dir / SNAPSHOT
    if snapshot.exists():
        snap = json.loads(snapshot.read_text(encoding="utf-8"))
        datasets = [d["name"] for d in snap["datasets"]]
        candidates = [m for m in snap["models"] if m != snap["target_model"]]
    rows = win_rates(records, datasets=datasets, candidates=candidates)
    ext = FORMAT_EXT[args.format]
    table = render_table(rows, args.format)
    (run_dir / f"report.{ext}").write_text(table, encoding="utf-8")
    plot_win_rates(rows, run_dir / "win_rates.png")

    summary = {"rows": [], "position_flip_rate": position_flip_rate(records),
               "bootstrap": {"level": args.level, "resamples": args.resamples, "seed": args.seed}}
    for row in rows:
        group = [r for r in records if (r.candidate_model, r.dataset) == (row.candidate_model, row.dataset)]
        entry = row.to_dict()
        judged = [r for r in group if r.final.outcome.value != "Errored"]
        entry["ci"] = bootstrap_ci(group, args.level, args.resamples, args.seed) if judged else None
        entry["position_flip_rate"] = position_flip_rate(group) if judged else None
        summary["rows"].append(entry)
    (run_dir / "report_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    sys.stdout.write(table)
    return 0


def cmd_agreement(args) -> int:
    from pairjudge.figures import plot_confusion

    run_dir = Path(args.run)
    records = read_verdicts(run_dir)
    human = load_human_verdicts(args.human)
    judge_v, human_v, stats = join_for_agreement(records, human)
    if not judge_v:
        raise UsageError("no judge/human verdict pairs to compare")
    rep = agreement_metrics(judge_v, human_v)
    payload = {**rep.to_dict(), "join": stats}
    (run_dir / "agreement.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    plot_confusion(rep, run_dir / "agreement_confusion.png")
    if FORMAT_EXT[args.format] == "json":
        print(json.dumps(payload, indent=2))
    else:
        print(f"pairs: {rep.n_pairs}  accuracy: {rep.accuracy:.4f}  macro-F1: {rep.macro_f1:.4f}")
        print(f"join: {stats}")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "prompts": cmd_prompts,
    "generate": cmd_generate,
    "judge": cmd_judge,
    "report": cmd_report,
    "agreement": cmd_agreement,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DatasetError, PromptError, BackendConfigError, RunStateError, UsageError,
            ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (BackendError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
