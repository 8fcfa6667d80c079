"""Two-stage run driver: generate every summary, then judge candidate/target pairs.

Run directory layout::

    run_config.json     materialized config snapshot
    generations.jsonl   one line per (dataset, sample, model)
    verdicts.jsonl      one ComparisonRecord per line
    audit.jsonl         errored generations, skipped and errored comparisons
    cache/              response cache (unless cache_dir is set elsewhere)

Journals are appended after every finished entry and rewritten in sorted
key order once a stage completes, so an interrupted run that is resumed
ends with the same bytes as an uninterrupted one.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path

from pairjudge.backend import Backend, BackendError, ResponseCache, build_backend
from pairjudge.config import ConfigError, RunConfig, write_snapshot
from pairjudge.dataset import Sample, SampleSet, load_dataset, subsample
from pairjudge.judge import ComparisonRecord, Outcome, judge_pair, schedule_comparisons
from pairjudge.prompts import PromptError, build_summarization_prompt

logger = logging.getLogger(__name__)

SNAPSHOT = "run_config.json"
GENERATIONS = "generations.jsonl"
VERDICTS = "verdicts.jsonl"
AUDIT = "audit.jsonl"


class RunStateError(RuntimeError):
    """The run directory is in a state the requested operation cannot use."""


def _dumps(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, sort_keys=True)


class Journal:
    """Append-only JSONL file, safe for concurrent appenders in one process."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def read(self) -> list[dict]:
        if not self.path.exists():
            return []
        data = self.path.read_bytes()
        if not data:
            return []
        lines = data.split(b"\n")
        # a crash can leave one torn last line; drop it
        if lines[-1] != b"":
            logger.warning("%s: dropping incomplete trailing line", self.path)
            with self._lock:
                with open(self.path, "r+b") as fh:
                    fh.truncate(len(data) - len(lines[-1]))
        records = []
        for raw in lines[:-1]:
            if raw.strip():
                records.append(json.loads(raw))
        return records

    def append(self, record: dict) -> None:
        line = _dumps(record) + "\n"
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())

    def rewrite_sorted(self, key=None) -> None:
        """Deduplicate lines and rewrite them in sorted order, atomically."""
        records = self.read()
        unique = {_dumps(r): r for r in records}
        ordered = sorted(unique.values(), key=key or _dumps)
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        with self._lock:
            with open(tmp, "w", encoding="utf-8") as fh:
                for r in ordered:
                    fh.write(_dumps(r) + "\n")
            os.replace(tmp, self.path)


@dataclass(frozen=True)
class GenerationEntry:
    dataset: str
    sample_id: str
    model: str
    summary: str | None
    request_digest: str = ""
    truncated: bool = False
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.dataset, self.sample_id, self.model)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "sample_id": self.sample_id,
            "model": self.model,
            "summary": self.summary,
            "request_digest": self.request_digest,
            "truncated": self.truncated,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationEntry":
        return cls(d["dataset"], d["sample_id"], d["model"], d.get("summary"), d.get("request_digest", ""),
                   bool(d.get("truncated", False)), d.get("error"))


class GenerationStore:
    """Map (dataset, sample_id, model) -> generation entry."""

    def __init__(self, entries=()):
        self.entries: dict[tuple[str, str, str], GenerationEntry] = {}
        for e in entries:
            self.add(e)

    def add(self, entry: GenerationEntry) -> None:
        self.entries[entry.key] = entry

    def get(self, dataset: str, sample_id: str, model: str) -> GenerationEntry | None:
        return self.entries.get((dataset, sample_id, model))

    def __contains__(self, key) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def errored(self) -> list[GenerationEntry]:
        return [e for e in self.entries.values() if not e.ok]

    def is_complete(self, sample_sets: dict[str, SampleSet], models) -> bool:
        return all((name, s.id, m) in self.entries for name, ss in sample_sets.items() for s in ss for m in models)

    @classmethod
    def from_journal(cls, path: str | Path) -> "GenerationStore":
        return cls(GenerationEntry.from_dict(d) for d in Journal(path).read())


@dataclass
class VerdictStore:
    records: list[ComparisonRecord]
    skips: list[dict]


def load_samples(config: RunConfig) -> dict[str, SampleSet]:
    out = {}
    for spec in config.datasets:
        ss = load_dataset(spec.path, spec.task, name=spec.name)
        if spec.subsample is not None:
            ss = subsample(ss, spec.subsample, config.seed)
        out[spec.name] = ss
    return out


def build_backends(config: RunConfig, names=None) -> dict[str, Backend]:
    cache = ResponseCache(config.resolved_cache_dir) if config.cache else None
    wanted = names if names is not None else [*config.model_names, config.judge_model]
    return {name: build_backend(config.backend(name), cache) for name in dict.fromkeys(wanted)}


def prepare_run_dir(config: RunConfig, journal_name: str, resume: bool) -> Path:
    """Create the run directory and write (or check) the config snapshot."""
    run_dir = Path(config.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    snapshot = run_dir / SNAPSHOT
    current = config.to_dict()
    if snapshot.exists():
        with open(snapshot, encoding="utf-8") as fh:
            previous = json.load(fh)
        if previous != json.loads(json.dumps(current)):
            raise ConfigError(f"{snapshot} differs from the current config; use a new --out directory")
    journal = run_dir / journal_name
    if not resume and journal.exists() and journal.stat().st_size > 0:
        raise RunStateError(f"{journal} already has entries; pass --resume to continue")
    write_snapshot(config, snapshot)
    return run_dir


def _run_parallel(tasks, parallelism: int, on_done) -> None:
    """Run callables on a bounded pool; on any exception cancel what has not started."""
    pool = ThreadPoolExecutor(max_workers=parallelism)
    try:
        futures = [pool.submit(t) for t in tasks]
        for fut in as_completed(futures):
            on_done(fut.result())
    except BaseException:
        pool.shutdown(wait=True, cancel_futures=True)
        raise
    pool.shutdown(wait=True)


def _generate_one(config: RunConfig, backend: Backend, dataset: str, sample: Sample) -> GenerationEntry:
    try:
        prompt = build_summarization_prompt(sample, config.instructions, backend.config.max_prompt_chars)
    except PromptError as exc:
        return GenerationEntry(dataset, sample.id, backend.name, None, error=f"PromptError: {exc}")
    request = backend.request(prompt.rendered)
    try:
        result = backend.complete(request)
    except BackendError as exc:
        logger.warning("generation failed for %s/%s/%s: %s", dataset, sample.id, backend.name, exc)
        return GenerationEntry(dataset, sample.id, backend.name, None, error=f"{type(exc).__name__}: {exc}",
                               truncated=prompt.truncated)
    if not result.text.strip():
        return GenerationEntry(dataset, sample.id, backend.name, None, result.request_digest,
                               prompt.truncated, error="empty completion")
    return GenerationEntry(dataset, sample.id, backend.name, result.text, result.request_digest, prompt.truncated)


def run_generation(config: RunConfig, backends: dict[str, Backend] | None = None, *,
                   resume: bool = False) -> GenerationStore:
    """Stage 1: one summary per (sample, model), target included."""
    run_dir = prepare_run_dir(config, GENERATIONS, resume)
    journal = Journal(run_dir / GENERATIONS)
    audit = Journal(run_dir / AUDIT)
    sample_sets = load_samples(config)
    backends = backends or build_backends(config, config.model_names)
    store = GenerationStore.from_journal(journal.path)
    if store:
        logger.info("resuming generation with %d stored entries", len(store))

    tasks = []
    for name, ss in sample_sets.items():
        for sample in ss:
            for model in config.model_names:
                if (name, sample.id, model) in store:
                    continue
                tasks.append(lambda b=backends[model], n=name, s=sample: _generate_one(config, b, n, s))

    def done(entry: GenerationEntry) -> None:
        journal.append(entry.to_dict())
        if not entry.ok:
            audit.append({"stage": "generation", "kind": "errored_generation", "dataset": entry.dataset,
                          "sample_id": entry.sample_id, "model": entry.model, "error": entry.error})
        store.add(entry)

    logger.info("generation: %d entries to produce", len(tasks))
    _run_parallel(tasks, config.parallelism, done)
    journal.rewrite_sorted(key=lambda d: (d["dataset"], d["sample_id"], d["model"]))
    audit.rewrite_sorted()
    return store


def _verdict_key(d: dict) -> tuple:
    return (d["dataset"], d["sample_id"], d["candidate_model"], d["target_model"])


def forbidden_names(config: RunConfig) -> list[str]:
    names = set()
    for b in (*config.models, config.judge):
        names.update((b.name, b.model_id))
    names.update(d.name for d in config.datasets)
    return sorted(names)


def run_evaluation(config: RunConfig, store: GenerationStore | None = None,
                   backends: dict[str, Backend] | None = None, *, resume: bool = False) -> VerdictStore:
    """Stage 2: judge every scheduled (candidate, target) pair on every sample."""
    run_dir = prepare_run_dir(config, VERDICTS, resume)
    journal = Journal(run_dir / VERDICTS)
    audit = Journal(run_dir / AUDIT)
    if store is None:
        store = GenerationStore.from_journal(run_dir / GENERATIONS)
    sample_sets = load_samples(config)
    pairs = schedule_comparisons(config.model_names, config.target_model)
    if backends is None:
        backends = build_backends(config, [config.judge_model])
    judge = backends[config.judge_model]
    names = forbidden_names(config)

    done_keys = {_verdict_key(d) for d in journal.read()}
    skips: list[dict] = []
    tasks = []
    for ds_name, ss in sample_sets.items():
        for sample in ss:
            for candidate, target in pairs:
                key = (ds_name, sample.id, candidate, target)
                if key in done_keys:
                    continue
                reason = None
                summaries = {}
                for model in (candidate, target):
                    entry = store.get(ds_name, sample.id, model)
                    if entry is None:
                        reason = f"missing generation for {model}"
                    elif not entry.ok:
                        reason = f"generation errored for {model}"
                    else:
                        summaries[model] = entry.summary
                    if reason:
                        break
                if reason:
                    skips.append({"stage": "evaluation", "kind": "skipped_comparison", "dataset": ds_name,
                                  "sample_id": sample.id, "candidate_model": candidate,
                                  "target_model": target, "reason": reason})
                    continue
                tasks.append(lambda s=sample, n=ds_name, c=candidate, t=target, cs=summaries[candidate],
                             ts=summaries[target]: judge_pair(
                                 judge, config.judge_template, s, cs, ts, dataset=n, candidate_model=c,
                                 target_model=t, separator=config.instructions.separator,
                                 forbidden_names=names))
    for skip in skips:
        audit.append(skip)

    def done(record: ComparisonRecord) -> None:
        journal.append(record.to_dict())
        if record.final.outcome is Outcome.ERRORED:
            audit.append({"stage": "evaluation", "kind": "errored_comparison", "dataset": record.dataset,
                          "sample_id": record.sample_id, "candidate_model": record.candidate_model,
                          "target_model": record.target_model, "flags": list(record.final.flags)})

    logger.info("evaluation: %d comparisons to judge, %d skipped", len(tasks), len(skips))
    _run_parallel(tasks, config.parallelism, done)
    journal.rewrite_sorted(key=_verdict_key)
    audit.rewrite_sorted()
    records = [ComparisonRecord.from_dict(d) for d in journal.read()]
    return VerdictStore(records, skips)


def read_verdicts(run_dir: str | Path) -> list[ComparisonRecord]:
    return [ComparisonRecord.from_dict(d) for d in Journal(Path(run_dir) / VERDICTS).read()]
