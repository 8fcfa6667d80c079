"""Win rates, bootstrap intervals, position diagnostics and judge/human agreement."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from pairjudge.judge import ComparisonRecord, FinalVerdict, Outcome, Preferred

DASH = "—"
CLASSES = (Outcome.CANDIDATE_WIN, Outcome.TARGET_WIN, Outcome.TIE)
_RATE_NAMES = {Outcome.CANDIDATE_WIN: "win", Outcome.TARGET_WIN: "loss", Outcome.TIE: "tie"}


def largest_remainder(counts: Sequence[int], total: int = 100) -> list[int]:
    """Integer shares of ``total`` proportional to ``counts`` that sum to ``total``.

    Each share starts at its floor; leftover units go to the largest
    remainders, ties broken by position (earlier first).
    """
    n = sum(counts)
    if n == 0:
        raise ValueError("counts sum to zero")
    floors = [c * total // n for c in counts]
    rems = [c * total % n for c in counts]
    deficit = total - sum(floors)
    for i in sorted(range(len(counts)), key=lambda i: (-rems[i], i))[:deficit]:
        floors[i] += 1
    return floors


@dataclass(frozen=True)
class WinRateRow:
    candidate_model: str
    dataset: str
    target_model: str
    wins: int = 0
    losses: int = 0
    ties: int = 0
    errored: int = 0

    @property
    def judged(self) -> int:
        return self.wins + self.losses + self.ties

    @property
    def percentages(self) -> tuple[int, int, int] | None:
        if self.judged == 0:
            return None
        return tuple(largest_remainder([self.wins, self.losses, self.ties]))

    def to_dict(self) -> dict:
        pct = self.percentages
        return {
            "candidate_model": self.candidate_model,
            "dataset": self.dataset,
            "target_model": self.target_model,
            "wins": self.wins,
            "losses": self.losses,
            "ties": self.ties,
            "errored": self.errored,
            "win_pct": pct[0] if pct else None,
            "loss_pct": pct[1] if pct else None,
            "tie_pct": pct[2] if pct else None,
        }


def win_rates(records: Iterable[ComparisonRecord], datasets: Sequence[str] | None = None,
              candidates: Sequence[str] | None = None) -> list[WinRateRow]:
    """One row per (candidate, dataset).

    Rows follow ``candidates`` x ``datasets`` when given (missing groups get
    zero rows); otherwise both axes are sorted by name.
    """
    counts: dict[tuple[str, str], dict] = {}
    targets: dict[tuple[str, str], set] = {}
    field_for = {Outcome.CANDIDATE_WIN: "wins", Outcome.TARGET_WIN: "losses", Outcome.TIE: "ties",
                 Outcome.ERRORED: "errored"}
    for r in records:
        key = (r.candidate_model, r.dataset)
        c = counts.setdefault(key, {"wins": 0, "losses": 0, "ties": 0, "errored": 0})
        c[field_for[r.final.outcome]] += 1
        targets.setdefault(key, set()).add(r.target_model)
    for key, ts in targets.items():
        if len(ts) > 1:
            raise ValueError(f"candidate {key[0]!r} on {key[1]!r} was compared against several targets: {sorted(ts)}")
    all_targets = sorted(set().union(*targets.values())) if targets else []
    default_target = all_targets[0] if len(all_targets) == 1 else ""

    cand_order = list(candidates) if candidates is not None else sorted({k[0] for k in counts})
    ds_order = list(datasets) if datasets is not None else sorted({k[1] for k in counts})
    rows = []
    for cand in cand_order:
        for ds in ds_order:
            key = (cand, ds)
            target = next(iter(targets[key])) if key in targets else default_target
            rows.append(WinRateRow(cand, ds, target, **counts.get(key, {})))
    return rows


def bootstrap_ci(records: Sequence[ComparisonRecord], level: float = 0.95, resamples: int = 1000,
                 seed: int = 0) -> dict[str, tuple[float, float]]:
    """Percentile bootstrap intervals (in percent) for win, loss and tie rates.

    Errored records are dropped and the rest sorted by record key. Resample
    ``r`` is row ``r`` of ``numpy.random.default_rng(seed).integers(0, n,
    size=(resamples, n))``; bounds use ``numpy.percentile`` (linear) at
    ``(1 - level) / 2`` and ``(1 + level) / 2``.
    """
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    if resamples < 1:
        raise ValueError("resamples must be positive")
    judged = sorted((r for r in records if r.final.outcome is not Outcome.ERRORED), key=lambda r: r.key)
    if not judged:
        raise ValueError("bootstrap_ci needs at least one non-errored record")
    codes = np.array([CLASSES.index(r.final.outcome) for r in judged])
    n = len(codes)
    idx = np.random.default_rng(seed).integers(0, n, size=(resamples, n))
    drawn = codes[idx]
    lo_q, hi_q = 100 * (1 - level) / 2, 100 * (1 + level) / 2
    out = {}
    for i, outcome in enumerate(CLASSES):
        rates = (drawn == i).mean(axis=1) * 100.0
        lo, hi = np.percentile(rates, [lo_q, hi_q])
        out[_RATE_NAMES[outcome]] = (float(lo), float(hi))
    return out


def position_flip_rate(records: Iterable[ComparisonRecord]) -> float:
    """Share of records whose two order verdicts picked the same position.

    Only records with both orders parsed (First, Second or Tie) count.
    Returns NaN when there are none.
    """
    usable = 0
    flipped = 0
    for r in records:
        p1, p2 = r.verdict_order1.preferred, r.verdict_order2.preferred
        if Preferred.UNPARSEABLE in (p1, p2) or r.final.outcome is Outcome.ERRORED:
            continue
        usable += 1
        if p1 == p2 and p1 is not Preferred.TIE:
            flipped += 1
    return flipped / usable if usable else float("nan")


@dataclass(frozen=True)
class AgreementReport:
    n_pairs: int
    accuracy: float
    macro_f1: float
    confusion: tuple[tuple[int, int, int], ...]
    per_class_f1: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "n_pairs": self.n_pairs,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "classes": [c.value for c in CLASSES],
            "confusion_rows_human_cols_judge": [list(r) for r in self.confusion],
            "per_class_f1": self.per_class_f1,
            "f1_averaging": "macro over classes present in either list",
        }


def _as_outcome(v) -> Outcome:
    if isinstance(v, FinalVerdict):
        return v.outcome
    return Outcome(v)


def agreement_metrics(judge: Sequence, human: Sequence) -> AgreementReport:
    """Accuracy and macro-F1 of judge verdicts against human verdicts.

    Confusion rows are human labels, columns judge labels. The macro average
    runs over classes occurring in either list, so identical inputs always
    score 1.0.
    """
    if len(judge) != len(human):
        raise ValueError(f"length mismatch: {len(judge)} judge vs {len(human)} human verdicts")
    j = [_as_outcome(v) for v in judge]
    h = [_as_outcome(v) for v in human]
    if Outcome.ERRORED in j or Outcome.ERRORED in h:
        raise ValueError("Errored verdicts present; filter them out before computing agreement")
    if not j:
        raise ValueError("no verdict pairs")
    conf = [[0, 0, 0] for _ in CLASSES]
    for hv, jv in zip(h, j):
        conf[CLASSES.index(hv)][CLASSES.index(jv)] += 1
    n = len(j)
    accuracy = sum(conf[i][i] for i in range(3)) / n
    per_class = {}
    for i, c in enumerate(CLASSES):
        tp = conf[i][i]
        predicted = sum(conf[r][i] for r in range(3))
        actual = sum(conf[i])
        if predicted == 0 and actual == 0:
            continue
        per_class[c.value] = 2 * tp / (predicted + actual)
    macro = sum(per_class.values()) / len(per_class)
    return AgreementReport(n, accuracy, macro, tuple(tuple(r) for r in conf), per_class)


def render_table(rows: Sequence[WinRateRow], fmt: str = "markdown") -> str:
    """Render rows grouped like the published layout: per dataset, candidate / target / tie.

    Candidate and dataset order follow first appearance in ``rows``.
    """
    fmt = {"md": "markdown"}.get(fmt, fmt)
    if fmt == "json":
        return json.dumps([r.to_dict() for r in rows], indent=2, ensure_ascii=False) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        fields = ["candidate_model", "dataset", "target_model", "wins", "losses", "ties", "errored",
                  "win_pct", "loss_pct", "tie_pct"]
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: ("" if v is None else v) for k, v in r.to_dict().items()})
        return buf.getvalue()
    if fmt != "markdown":
        raise ValueError(f"unknown format {fmt!r} (expected markdown, csv or json)")

    datasets = list(dict.fromkeys(r.dataset for r in rows))
    candidates = list(dict.fromkeys(r.candidate_model for r in rows))
    targets = {r.target_model for r in rows if r.target_model}
    target_label = targets.pop() if len(targets) == 1 else "Target"
    by_key = {(r.candidate_model, r.dataset): r for r in rows}

    header = ["Model A Candidates"]
    for ds in datasets:
        header += [f"{ds}: Model A", f"{ds}: {target_label}", f"{ds}: Tie"]
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join(["---"] + [":---:"] * (len(header) - 1)) + "|"]
    for cand in candidates:
        cells = [cand]
        for ds in datasets:
            row = by_key.get((cand, ds))
            pct = row.percentages if row else None
            cells += [f"{p}%" for p in pct] if pct else [DASH] * 3
        lines.append("| " + " | ".join(cells) + " |")

    lines += ["", "| Candidate | Dataset | Wins | Losses | Ties | Errored |", "|---|---|---:|---:|---:|---:|"]
    for r in rows:
        lines.append(f"| {r.candidate_model} | {r.dataset} | {r.wins} | {r.losses} | {r.ties} | {r.errored} |")
    return "\n".join(lines) + "\n"


def load_human_verdicts(path: str | Path) -> dict[tuple[str, str, str, str], Outcome]:
    """Read human labels: JSONL with dataset, sample_id, candidate_model, target_model, final.

    ``final`` may be an outcome string or an object with an ``outcome`` key.
    Lines whose ``source`` is set to anything but ``human`` are rejected.
    """
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            d = json.loads(line)
            if d.get("source", "human") != "human":
                raise ValueError(f"{path}:{lineno}: source must be 'human'")
            try:
                key = (d["dataset"], d["sample_id"], d["candidate_model"], d["target_model"])
                final = d["final"]
            except KeyError as exc:
                raise ValueError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from None
            out[key] = Outcome(final["outcome"] if isinstance(final, dict) else final)
    return out


def join_for_agreement(records: Iterable[ComparisonRecord], human: dict) -> tuple[list, list, dict]:
    """Pair judge and human verdicts on the record key, skipping errored ones."""
    judge_v, human_v = [], []
    stats = {"matched": 0, "judge_errored": 0, "human_errored": 0, "unmatched_human": 0}
    seen = set()
    for r in sorted(records, key=lambda r: r.key):
        if r.key not in human:
            continue
        seen.add(r.key)
        if r.final.outcome is Outcome.ERRORED:
            stats["judge_errored"] += 1
            continue
        if human[r.key] is Outcome.ERRORED:
            stats["human_errored"] += 1
            continue
        judge_v.append(r.final.outcome)
        human_v.append(human[r.key])
        stats["matched"] += 1
    stats["unmatched_human"] = len(set(human) - seen)
    return judge_v, human_v, stats
