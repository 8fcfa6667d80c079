import json
from pathlib import Path

import pytest

from pairjudge.config import parse_config
from pairjudge.judge import ComparisonRecord, FinalVerdict, Order, OrderVerdict, Outcome, Preferred, combine_swapped


def write_jsonl(path: Path, records) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")
    return path


def question_records(n, prefix="q"):
    return [{"id": f"{prefix}{i}", "question": f"Is drug number {i} safe to take with food every day?",
             "reference_summary": f"Safety of drug {i}?"} for i in range(n)]


def query_records(n, prefix="a"):
    return [{"id": f"{prefix}{i}", "question": f"How is condition {i} treated?",
             "document": f"Condition {i} is treated with rest, fluids and follow-up care in clinic {i}."}
            for i in range(n)]


def dialog_records(n, prefix="d"):
    return [{"id": f"{prefix}{i}", "dialogue": [
        {"speaker": "Patient", "utterance": f"My knee has hurt for {i + 1} days."},
        {"speaker": "Doctor", "utterance": "Any swelling or redness around the joint?"},
    ]} for i in range(n)]


def make_record(p1: Preferred, p2: Preferred, sample_id="s0", candidate="cand", target="tgt",
                dataset="ds", outcome: Outcome | None = None) -> ComparisonRecord:
    v1 = OrderVerdict(p1, "judge reply", Order.CANDIDATE_FIRST)
    v2 = OrderVerdict(p2, "judge reply", Order.TARGET_FIRST)
    final = FinalVerdict(outcome) if outcome is not None else combine_swapped(v1, v2)
    return ComparisonRecord(dataset, sample_id, candidate, target, v1, v2, final, ("d1", "d2"))


def outcome_record(outcome: Outcome, sample_id="s0", candidate="cand", dataset="ds", target="tgt"):
    pattern = {
        Outcome.CANDIDATE_WIN: (Preferred.FIRST, Preferred.SECOND),
        Outcome.TARGET_WIN: (Preferred.SECOND, Preferred.FIRST),
        Outcome.TIE: (Preferred.TIE, Preferred.TIE),
        Outcome.ERRORED: (Preferred.UNPARSEABLE, Preferred.UNPARSEABLE),
    }[outcome]
    return make_record(*pattern, sample_id=sample_id, candidate=candidate, target=target, dataset=dataset,
                       outcome=outcome)


def mock_backend_dict(name, behavior, **extra):
    return {"name": name, "model_id": f"mock/{name}", "provider": "mock",
            "requests_per_minute": 1_000_000, "mock": behavior, **extra}


def build_config(tmp_path: Path, models=("cand-1", "target-x"), target="target-x", n_samples=10,
                 judge=None, task="question", parallelism=1, out="run", model_behaviors=None, **extra):
    """A RunConfig over one generated dataset with mock backends."""
    makers = {"question": question_records, "query": query_records, "dialog": dialog_records}
    data = write_jsonl(tmp_path / "data" / f"{task}.jsonl", makers[task](n_samples))
    model_behaviors = model_behaviors or {}
    backends = [mock_backend_dict(m, model_behaviors.get(m, {"behavior": "echo", "words": 4 + 2 * i,
                                                             "prefix": f"S{i} "}))
                for i, m in enumerate(models)]
    backends.append(mock_backend_dict("judge-j", judge or {"behavior": "content", "prefer": "hash"}))
    raw = {
        "datasets": [{"name": "dsx", "path": str(data), "task": task}],
        "backends": backends,
        "models": list(models),
        "target_model": target,
        "judge_model": "judge-j",
        "parallelism": parallelism,
        "output_dir": str(tmp_path / out),
        **extra,
    }
    return parse_config(raw)


@pytest.fixture
def tmp_config(tmp_path):
    def make(**kwargs):
        return build_config(tmp_path, **kwargs)
    return make


_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and (report.when == "call" or report.failed):
        _ACCEPTANCE.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
