"""Task datasets: loading, validation and seeded subsampling.

Every dataset is one UTF-8 JSONL file. Each line holds one record with a
fixed set of field names::

    {"id": "q1", "question": "...", "reference_summary": "..."}
    {"id": "a1", "question": "...", "document": "..."}
    {"id": "d1", "dialogue": [{"speaker": "Patient", "utterance": "..."}]}

Which fields are required depends on the task kind the caller declares.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1


class TaskKind(str, Enum):
    QUESTION = "QuestionSummarization"
    QUERY = "QueryBasedSummarization"
    DIALOG = "DialogSummarization"

    @classmethod
    def parse(cls, value: "str | TaskKind") -> "TaskKind":
        """Accept the enum value, its member name, or a short alias."""
        if isinstance(value, TaskKind):
            return value
        aliases = {
            "question": cls.QUESTION,
            "query": cls.QUERY,
            "query_based": cls.QUERY,
            "dialog": cls.DIALOG,
            "dialogue": cls.DIALOG,
        }
        key = str(value).strip()
        for member in cls:
            if key in (member.value, member.name):
                return member
        try:
            return aliases[key.lower()]
        except KeyError:
            names = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown task kind {value!r} (expected one of {names})") from None


# Fields each kind must carry, besides "id". reference_summary is always optional.
REQUIRED_FIELDS = {
    TaskKind.QUESTION: ("question",),
    TaskKind.QUERY: ("question", "document"),
    TaskKind.DIALOG: ("dialogue",),
}
RECORD_FIELDS = ("id", "question", "document", "dialogue", "reference_summary")


class DatasetError(ValueError):
    """A dataset file or record does not match the record schema."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


@dataclass(frozen=True)
class Turn:
    speaker: str
    utterance: str


@dataclass(frozen=True)
class Sample:
    id: str
    task: TaskKind
    question: str | None = None
    document: str | None = None
    dialogue: tuple[Turn, ...] | None = None
    reference_summary: str | None = None

    def to_record(self) -> dict:
        record: dict = {"id": self.id}
        if self.question is not None:
            record["question"] = self.question
        if self.document is not None:
            record["document"] = self.document
        if self.dialogue is not None:
            record["dialogue"] = [{"speaker": t.speaker, "utterance": t.utterance} for t in self.dialogue]
        if self.reference_summary is not None:
            record["reference_summary"] = self.reference_summary
        return record


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str

    def __str__(self) -> str:
        return f"{self.field}: {self.rule}"


@dataclass(frozen=True)
class SampleSet:
    dataset_name: str
    task: TaskKind
    samples: tuple[Sample, ...]
    source_path: str = ""
    digest: str = ""

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def get(self, sample_id: str) -> Sample:
        for s in self.samples:
            if s.id == sample_id:
                return s
        raise KeyError(sample_id)


def validate_sample(sample: Sample) -> list[Violation]:
    """Return every broken invariant of ``sample``; empty means valid."""
    out: list[Violation] = []
    if not isinstance(sample.id, str) or not sample.id.strip():
        out.append(Violation("id", "empty"))
    required = REQUIRED_FIELDS[sample.task]
    for name in ("question", "document", "dialogue"):
        value = getattr(sample, name)
        if name in required and value is None:
            out.append(Violation(name, f"missing for {sample.task.value}"))
        elif name not in required and value is not None:
            out.append(Violation(name, f"not allowed for {sample.task.value}"))
    for name in ("question", "document"):
        value = getattr(sample, name)
        if name in required and value is not None and not value.strip():
            out.append(Violation(name, "empty"))
    if "dialogue" in required and sample.dialogue is not None:
        if not sample.dialogue:
            out.append(Violation("dialogue", "no turns"))
        for i, turn in enumerate(sample.dialogue, start=1):
            if not turn.speaker.strip():
                out.append(Violation(f"turn {i}", "speaker empty"))
            if not turn.utterance.strip():
                out.append(Violation(f"turn {i}", "utterance empty"))
    if sample.reference_summary is not None and not isinstance(sample.reference_summary, str):
        out.append(Violation("reference_summary", "not text"))
    return out


def _parse_record(record: object, task: TaskKind, lineno: int, path: str) -> Sample:
    if not isinstance(record, dict):
        raise DatasetError("record is not a JSON object", lineno, path)
    extra = sorted(set(record) - set(RECORD_FIELDS))
    if extra:
        raise DatasetError(f"unknown field {extra[0]!r}", lineno, path)
    if "id" not in record:
        raise DatasetError("missing field 'id'", lineno, path)
    required = REQUIRED_FIELDS[task]
    for name in required:
        if name not in record:
            raise DatasetError(f"missing field {name!r} for {task.value}", lineno, path)
    for name in ("question", "document", "dialogue"):
        if name in record and name not in required:
            raise DatasetError(f"field {name!r} not allowed for {task.value}", lineno, path)
    for name in ("id", "question", "document", "reference_summary"):
        if name in record and record[name] is not None and not isinstance(record[name], str):
            raise DatasetError(f"field {name!r} must be a string", lineno, path)

    dialogue = None
    if "dialogue" in record:
        raw_turns = record["dialogue"]
        if not isinstance(raw_turns, list):
            raise DatasetError("field 'dialogue' must be a list of turns", lineno, path)
        turns = []
        for i, turn in enumerate(raw_turns, start=1):
            if not isinstance(turn, dict) or set(turn) != {"speaker", "utterance"}:
                raise DatasetError(f"turn {i} must have exactly 'speaker' and 'utterance'", lineno, path)
            if not isinstance(turn["speaker"], str) or not isinstance(turn["utterance"], str):
                raise DatasetError(f"turn {i} fields must be strings", lineno, path)
            turns.append(Turn(turn["speaker"], turn["utterance"]))
        dialogue = tuple(turns)

    return Sample(
        id=record["id"],
        task=task,
        question=record.get("question"),
        document=record.get("document"),
        dialogue=dialogue,
        reference_summary=record.get("reference_summary"),
    )


def scan_dataset(path: str | Path, task: TaskKind | str) -> tuple[list[Sample], list[str]]:
    """Read every line of ``path`` and collect problems instead of raising.

    Returns the samples that parsed cleanly and a list of human-readable
    problems, each prefixed with its line number.
    """
    task = TaskKind.parse(task)
    path = Path(path)
    samples: list[Sample] = []
    problems: list[str] = []
    seen: dict[str, int] = {}
    text = path.read_bytes().decode("utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            problems.append(f"line {lineno}: invalid JSON ({exc.msg})")
            continue
        try:
            sample = _parse_record(record, task, lineno, "")
        except DatasetError as exc:
            problems.append(str(exc))
            continue
        violations = validate_sample(sample)
        if violations:
            problems.extend(f"line {lineno}: {v}" for v in violations)
            continue
        if sample.id in seen:
            problems.append(f"line {lineno}: id {sample.id!r} duplicates line {seen[sample.id]}")
            continue
        seen[sample.id] = lineno
        samples.append(sample)
    return samples, problems


def load_dataset(path: str | Path, task: TaskKind | str, name: str | None = None) -> SampleSet:
    """Load a JSONL dataset, raising :class:`DatasetError` on the first bad line."""
    task = TaskKind.parse(task)
    path = Path(path)
    raw = path.read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    samples: list[Sample] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(raw.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"invalid JSON ({exc.msg})", lineno, str(path)) from None
        sample = _parse_record(record, task, lineno, str(path))
        violations = validate_sample(sample)
        if violations:
            raise DatasetError(str(violations[0]), lineno, str(path))
        if sample.id in seen:
            raise DatasetError(f"duplicate id {sample.id!r} (first on line {seen[sample.id]})", lineno, str(path))
        seen[sample.id] = lineno
        samples.append(sample)
    if not samples:
        logger.warning("dataset %s is empty", path)
    logger.info("loaded %d samples from %s", len(samples), path)
    return SampleSet(
        dataset_name=name or path.stem,
        task=task,
        samples=tuple(samples),
        source_path=str(path),
        digest=digest,
    )


def dump_dataset(sample_set: SampleSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sample in sample_set.samples:
            fh.write(json.dumps(sample.to_record(), ensure_ascii=False) + "\n")


class SplitMix64:
    """SplitMix64 generator (Steele, Lea & Flood 2014), 64-bit outputs.

    Chosen because it is fully specified by a few lines of integer
    arithmetic, so every platform and any reimplementation produce the
    same stream for a given seed.
    """

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound) by rejection (no modulo bias)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            x = self.next()
            if x < limit:
                return x % bound


def subsample(sample_set: SampleSet, k: int, seed: int) -> SampleSet:
    """Pick ``k`` samples without replacement, keeping file order.

    Selection rule: positions 0..n-1 are shuffled with a Fisher-Yates pass
    driven by ``SplitMix64(seed)`` (for i from n-1 down to 1, swap i with
    ``below(i + 1)``); the first ``k`` shuffled positions are kept and then
    sorted back into ascending order.
    """
    n = len(sample_set.samples)
    if k < 0:
        raise ValueError("k must be non-negative")
    if k > n:
        raise ValueError(f"cannot subsample {k} from a set of {n}")
    rng = SplitMix64(seed)
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.below(i + 1)
        order[i], order[j] = order[j], order[i]
    keep = sorted(order[:k])
    return SampleSet(
        dataset_name=sample_set.dataset_name,
        task=sample_set.task,
        samples=tuple(sample_set.samples[i] for i in keep),
        source_path=sample_set.source_path,
        digest=sample_set.digest,
    )
