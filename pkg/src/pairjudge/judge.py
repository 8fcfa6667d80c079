"""Target-anchored pairwise judging with position swapping."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from pairjudge.backend import Backend, BackendError, cache_key
from pairjudge.dataset import Sample
from pairjudge.prompts import (
    DEFAULT_SEPARATOR,
    REASK_SUFFIX,
    JudgePromptTemplate,
    build_judge_prompt,
    context_text,
    find_leaks,
)

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"\[\[([ABC])\]\]")


class Preferred(str, Enum):
    FIRST = "First"
    SECOND = "Second"
    TIE = "Tie"
    UNPARSEABLE = "Unparseable"


class Order(str, Enum):
    CANDIDATE_FIRST = "CandidateFirst"
    TARGET_FIRST = "TargetFirst"


class Outcome(str, Enum):
    CANDIDATE_WIN = "CandidateWin"
    TARGET_WIN = "TargetWin"
    TIE = "Tie"
    ERRORED = "Errored"


@dataclass(frozen=True)
class OrderVerdict:
    preferred: Preferred
    raw_text: str
    order: Order
    reask_text: str | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "order": self.order.value,
            "preferred": self.preferred.value,
            "raw_text": self.raw_text,
            "reask_text": self.reask_text,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OrderVerdict":
        return cls(Preferred(d["preferred"]), d["raw_text"], Order(d["order"]),
                   d.get("reask_text"), d.get("error"))


@dataclass(frozen=True)
class FinalVerdict:
    outcome: Outcome
    flags: tuple[str, ...] = ()
    errored_order: Order | None = None

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome.value,
            "flags": list(self.flags),
            "errored_order": self.errored_order.value if self.errored_order else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FinalVerdict":
        errored = d.get("errored_order")
        return cls(Outcome(d["outcome"]), tuple(d.get("flags", ())), Order(errored) if errored else None)


@dataclass(frozen=True)
class ComparisonRecord:
    dataset: str
    sample_id: str
    candidate_model: str
    target_model: str
    verdict_order1: OrderVerdict
    verdict_order2: OrderVerdict
    final: FinalVerdict
    judge_request_digests: tuple[str, str] = ("", "")
    source: str = field(default="judge")

    def __post_init__(self):
        if self.verdict_order1.order is not Order.CANDIDATE_FIRST or self.verdict_order2.order is not Order.TARGET_FIRST:
            raise ValueError("verdict_order1 must be CandidateFirst and verdict_order2 TargetFirst")

    @property
    def key(self) -> tuple[str, str, str, str]:
        return (self.dataset, self.sample_id, self.candidate_model, self.target_model)

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "dataset": self.dataset,
            "sample_id": self.sample_id,
            "candidate_model": self.candidate_model,
            "target_model": self.target_model,
            "verdict_order1": self.verdict_order1.to_dict(),
            "verdict_order2": self.verdict_order2.to_dict(),
            "final": self.final.to_dict(),
            "judge_request_digests": list(self.judge_request_digests),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ComparisonRecord":
        return cls(
            dataset=d["dataset"],
            sample_id=d["sample_id"],
            candidate_model=d["candidate_model"],
            target_model=d["target_model"],
            verdict_order1=OrderVerdict.from_dict(d["verdict_order1"]),
            verdict_order2=OrderVerdict.from_dict(d["verdict_order2"]),
            final=FinalVerdict.from_dict(d["final"]),
            judge_request_digests=tuple(d.get("judge_request_digests", ("", ""))),
            source=d.get("source", "judge"),
        )


def schedule_comparisons(models: Sequence[str], target: str) -> list[tuple[str, str]]:
    """One (candidate, target) pair per non-target model, in input order."""
    if len(set(models)) != len(models):
        dupes = sorted({m for m in models if list(models).count(m) > 1})
        raise ValueError(f"duplicate model names: {', '.join(dupes)}")
    if target not in models:
        raise ValueError(f"target model {target!r} is not among the models")
    if len(models) < 2:
        raise ValueError("need at least one candidate besides the target")
    return [(m, target) for m in models if m != target]


def parse_verdict(raw: str) -> Preferred:
    """Map the last verdict token in ``raw`` to a preference."""
    tokens = _TOKEN_RE.findall(raw or "")
    if not tokens:
        return Preferred.UNPARSEABLE
    return {"A": Preferred.FIRST, "B": Preferred.SECOND, "C": Preferred.TIE}[tokens[-1]]


def combine_swapped(v1: OrderVerdict, v2: OrderVerdict) -> FinalVerdict:
    """Both-orders rule: a side wins only if preferred in each presentation order.

    An unparseable order counts as a tie for that order and is flagged.
    """
    if v1.order is not Order.CANDIDATE_FIRST or v2.order is not Order.TARGET_FIRST:
        raise ValueError("combine_swapped expects (CandidateFirst, TargetFirst) verdicts")
    flags = []
    p1, p2 = v1.preferred, v2.preferred
    if p1 is Preferred.UNPARSEABLE:
        flags.append("order1_unparseable")
        p1 = Preferred.TIE
    if p2 is Preferred.UNPARSEABLE:
        flags.append("order2_unparseable")
        p2 = Preferred.TIE
    if p1 is Preferred.FIRST and p2 is Preferred.SECOND:
        outcome = Outcome.CANDIDATE_WIN
    elif p1 is Preferred.SECOND and p2 is Preferred.FIRST:
        outcome = Outcome.TARGET_WIN
    else:
        outcome = Outcome.TIE
    return FinalVerdict(outcome, tuple(flags))


def _judge_once(judge: Backend, prompt_text: str, order: Order) -> tuple[OrderVerdict, str]:
    request = judge.request(prompt_text)
    digest = cache_key(request)
    try:
        raw = judge.complete(request).text
        preferred = parse_verdict(raw)
        reask_text = None
        if preferred is Preferred.UNPARSEABLE:
            logger.info("unparseable judge reply (%s), re-asking", order.value)
            reask_text = judge.complete(judge.request(f"{prompt_text}\n\n{REASK_SUFFIX}")).text
            preferred = parse_verdict(reask_text)
    except BackendError as exc:
        logger.warning("judge call failed (%s): %s", order.value, exc)
        return OrderVerdict(Preferred.UNPARSEABLE, "", order, error=f"{type(exc).__name__}: {exc}"), digest
    return OrderVerdict(preferred, raw, order, reask_text=reask_text), digest


def judge_pair(
    judge: Backend,
    template: JudgePromptTemplate,
    sample: Sample,
    candidate_summary: str,
    target_summary: str,
    *,
    dataset: str = "",
    candidate_model: str = "",
    target_model: str = "",
    separator: str = DEFAULT_SEPARATOR,
    forbidden_names: Iterable[str] = (),
) -> ComparisonRecord:
    """Judge candidate vs target twice, candidate shown first and then second."""
    context = context_text(sample, separator)
    first = build_judge_prompt(template, context, candidate_summary, target_summary)
    second = build_judge_prompt(template, context, target_summary, candidate_summary)

    names = list(forbidden_names)
    leaks = sorted(set(find_leaks(first.rendered, names)) | set(find_leaks(second.rendered, names)))
    if leaks:
        logger.warning("judge prompt for %s/%s mentions %s", dataset, sample.id, ", ".join(leaks))

    v1, d1 = _judge_once(judge, first.rendered, Order.CANDIDATE_FIRST)
    v2, d2 = _judge_once(judge, second.rendered, Order.TARGET_FIRST)

    errored = [v.order for v in (v1, v2) if v.error is not None]
    if errored:
        flags = tuple(f"{'order1' if o is Order.CANDIDATE_FIRST else 'order2'}_error" for o in errored)
        final = FinalVerdict(Outcome.ERRORED, flags, errored[0])
    else:
        final = combine_swapped(v1, v2)
    if leaks:
        final = FinalVerdict(final.outcome, final.flags + tuple(f"name_leak:{n}" for n in leaks),
                             final.errored_order)
    return ComparisonRecord(
        dataset=dataset,
        sample_id=sample.id,
        candidate_model=candidate_model,
        target_model=target_model,
        verdict_order1=v1,
        verdict_order2=v2,
        final=final,
        judge_request_digests=(d1, d2),
    )
