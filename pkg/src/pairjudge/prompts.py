"""Summarization and judge prompt assembly."""

from __future__ import annotations

import re
from dataclasses import dataclass

from pairjudge.dataset import Sample, TaskKind, validate_sample

DEFAULT_SEPARATOR = "\n"

DEFAULT_T_Q = (
    "Summarize the following consumer health question into a short question "
    "that keeps the key medical information needed to answer it."
)
DEFAULT_T_A = (
    "Given the medical question and the reference document below, write a short "
    "summary of the document that answers the question."
)
DEFAULT_T_D = (
    "Summarize the following conversation between a patient and a doctor in a few "
    "sentences describing the patient's medical condition."
)

VERDICT_TOKENS = {"A": "[[A]]", "B": "[[B]]", "C": "[[C]]"}
DIMENSIONS = ("coherence", "consistency", "fluency", "relevance")
PLACEHOLDERS = ("context", "answer_1", "answer_2")
_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")

# Section markers around the two answers. Mock judges locate answers by them.
ANSWER_1_START = "[The Start of Assistant A's Summary]"
ANSWER_1_END = "[The End of Assistant A's Summary]"
ANSWER_2_START = "[The Start of Assistant B's Summary]"
ANSWER_2_END = "[The End of Assistant B's Summary]"
CONTEXT_START = "[The Start of Source Text]"
CONTEXT_END = "[The End of Source Text]"

DEFAULT_RUBRIC = (
    "You are an impartial reviewer comparing two summaries of the same medical source "
    "text written by two AI assistants. Decide which summary is better. Judge them on "
    "four dimensions: coherence (the summary is well organized and reads as a whole), "
    "consistency (every statement is supported by the source and nothing is invented), "
    "fluency (the language is grammatical and easy to read), and relevance (the summary "
    "keeps the important information and leaves out the unimportant). Do not let the "
    "order in which the summaries appear, their length, or any assistant name influence "
    "your decision. Briefly explain your comparison first."
)
DEFAULT_BODY = (
    f"{CONTEXT_START}\n{{context}}\n{CONTEXT_END}\n\n"
    f"{ANSWER_1_START}\n{{answer_1}}\n{ANSWER_1_END}\n\n"
    f"{ANSWER_2_START}\n{{answer_2}}\n{ANSWER_2_END}"
)
DEFAULT_VERDICT_PROTOCOL = (
    'After your explanation, output your final verdict by strictly following this format: '
    '"[[A]]" if assistant A is better, "[[B]]" if assistant B is better, and "[[C]]" for a tie.'
)
REASK_SUFFIX = "Reply with only [[A]], [[B]], or [[C]]."


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class InstructionSet:
    t_q: str = DEFAULT_T_Q
    t_a: str = DEFAULT_T_A
    t_d: str = DEFAULT_T_D
    separator: str = DEFAULT_SEPARATOR

    def __post_init__(self):
        for name in ("t_q", "t_a", "t_d"):
            if not getattr(self, name).strip():
                raise PromptError(f"instruction {name} is empty")

    def for_task(self, task: TaskKind) -> str:
        return {TaskKind.QUESTION: self.t_q, TaskKind.QUERY: self.t_a, TaskKind.DIALOG: self.t_d}[task]


@dataclass(frozen=True)
class Prompt:
    rendered: str
    parts: tuple[tuple[str, str], ...]
    task: TaskKind | None = None
    truncated: bool = False


def flatten_dialogue(sample: Sample) -> str:
    return "\n".join(f"{t.speaker}: {t.utterance}" for t in sample.dialogue or ())


def task_parts(sample: Sample) -> list[tuple[str, str]]:
    """The task-input parts of a sample, without the instruction."""
    if sample.task is TaskKind.QUESTION:
        return [("question", sample.question)]
    if sample.task is TaskKind.QUERY:
        return [("question", sample.question), ("document", sample.document)]
    return [("dialogue", flatten_dialogue(sample))]


def context_text(sample: Sample, separator: str = DEFAULT_SEPARATOR) -> str:
    """Source text shown to the judge. Never includes the reference summary."""
    return separator.join(text for _, text in task_parts(sample))


def build_summarization_prompt(
    sample: Sample, instructions: InstructionSet, char_budget: int | None = None
) -> Prompt:
    """Instruction followed by the task input, joined with the separator.

    When ``char_budget`` is set and the rendered prompt is longer, the last
    part (question, document or dialogue) is cut from the end until it fits
    and the prompt is flagged as truncated.
    """
    problems = validate_sample(sample)
    if problems:
        raise PromptError(f"sample {sample.id!r} is not valid for {sample.task.value}: {problems[0]}")
    parts = [("instruction", instructions.for_task(sample.task))] + task_parts(sample)
    sep = instructions.separator
    rendered = sep.join(text for _, text in parts)
    truncated = False
    if char_budget is not None and len(rendered) > char_budget:
        overflow = len(rendered) - char_budget
        label, last = parts[-1]
        if overflow >= len(last):
            raise PromptError(
                f"sample {sample.id!r}: prompt overhead alone exceeds the {char_budget}-character budget"
            )
        parts[-1] = (label, last[: len(last) - overflow])
        rendered = sep.join(text for _, text in parts)
        truncated = True
    return Prompt(rendered=rendered, parts=tuple(parts), task=sample.task, truncated=truncated)


@dataclass(frozen=True)
class JudgePromptTemplate:
    rubric: str = DEFAULT_RUBRIC
    body: str = DEFAULT_BODY
    verdict_protocol: str = DEFAULT_VERDICT_PROTOCOL

    def __post_init__(self):
        lowered = self.rubric.lower()
        missing = [d for d in DIMENSIONS if d not in lowered]
        if missing:
            raise PromptError(f"judge rubric does not mention: {', '.join(missing)}")
        tokens = set(re.findall(r"\[\[[A-Z]\]\]", self.verdict_protocol))
        if tokens != set(VERDICT_TOKENS.values()):
            raise PromptError("verdict protocol must define exactly [[A]], [[B]] and [[C]]")
        text = self.text
        found = _PLACEHOLDER_RE.findall(text)
        unknown = sorted(set(found) - set(PLACEHOLDERS))
        if unknown:
            raise PromptError(f"judge template has unknown placeholder {{{unknown[0]}}}")
        for name in PLACEHOLDERS:
            if found.count(name) != 1:
                raise PromptError(f"judge template must contain {{{name}}} exactly once")

    @property
    def text(self) -> str:
        return f"{self.rubric}\n\n{self.body}\n\n{self.verdict_protocol}"


def build_judge_prompt(template: JudgePromptTemplate, context: str, answer_1: str, answer_2: str) -> Prompt:
    """Fill the judge template. ``answer_1`` is shown as Assistant A."""
    values = {"context": context, "answer_1": answer_1, "answer_2": answer_2}
    for name, value in values.items():
        if not value or not value.strip():
            raise PromptError(f"{name} is empty")
    seen: list[str] = []

    def fill(match: re.Match) -> str:
        name = match.group(1)
        if name not in values:
            raise PromptError(f"unresolved placeholder {{{name}}}")
        seen.append(name)
        return values[name]

    # single pass, so placeholder-like text inside the answers is left alone
    rendered = _PLACEHOLDER_RE.sub(fill, template.text)
    if sorted(seen) != sorted(PLACEHOLDERS):
        raise PromptError("judge template placeholders not substituted exactly once")
    return Prompt(rendered=rendered, parts=(("judge", rendered),), task=None)


def find_leaks(text: str, names) -> list[str]:
    """Names (3+ characters) that appear in ``text``, case-insensitively.

    Shorter names are skipped because they collide with the A/B labels.
    """
    lowered = text.lower()
    leaks = []
    for name in names:
        if name and len(name) >= 3 and name.lower() in lowered:
            leaks.append(name)
    return sorted(set(leaks))
