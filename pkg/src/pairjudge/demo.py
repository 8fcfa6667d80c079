"""Offline demo profile: synthetic datasets and mock backends for every role."""

from __future__ import annotations

import itertools
import json
from pathlib import Path

CONDITIONS = ["migraine", "type 2 diabetes", "asthma", "eczema", "high blood pressure",
              "iron deficiency", "gout", "acid reflux", "insomnia", "seasonal allergies"]
DRUGS = ["ibuprofen", "metformin", "an inhaler", "a steroid cream", "lisinopril"]
CONCERNS = ["whether it is safe to take every day", "what side effects to watch for",
            "if it interacts with my other medication", "how long it takes to work"]


def _question(i: int) -> dict:
    cond = CONDITIONS[i % len(CONDITIONS)]
    drug = DRUGS[i % len(DRUGS)]
    concern = CONCERNS[i % len(CONCERNS)]
    return {
        "id": f"q{i:03d}",
        "question": (f"Hello, I was diagnosed with {cond} last year and my doctor put me on {drug}. "
                     f"I would like to know {concern}. I am 54 and otherwise healthy. Thanks in advance."),
        "reference_summary": f"What should I know about {drug} for {cond}?",
    }


def _query(i: int) -> dict:
    cond = CONDITIONS[(i * 3) % len(CONDITIONS)]
    return {
        "id": f"a{i:03d}",
        "question": f"What are the treatments for {cond}?",
        "document": (f"{cond.capitalize()} is a common condition. Treatment usually starts with lifestyle "
                     f"changes such as diet, sleep and regular exercise. When symptoms persist, clinicians "
                     f"may prescribe medication and schedule follow-up visits to monitor progress. "
                     f"Patients should report new or worsening symptoms promptly."),
    }


def _dialog(i: int) -> dict:
    cond = CONDITIONS[(i * 7) % len(CONDITIONS)]
    days = 2 + i % 9
    return {
        "id": f"d{i:03d}",
        "dialogue": [
            {"speaker": "Patient", "utterance": f"I think my {cond} is flaring up again for {days} days now."},
            {"speaker": "Doctor", "utterance": "Have you changed anything in your routine or medication?"},
            {"speaker": "Patient", "utterance": "I stopped my usual medicine because I felt better."},
            {"speaker": "Doctor", "utterance": "Please restart it and book a review visit within a week."},
        ],
    }


def write_demo_datasets(directory: Path, n: int = 12) -> dict[str, Path]:
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, make in (("demo_qs", _question), ("demo_ans", _query), ("demo_dialog", _dialog)):
        path = directory / f"{name}.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            for i in range(n):
                fh.write(json.dumps(make(i)) + "\n")
        paths[name] = path
    return paths


def demo_config_dict(out_dir: Path) -> dict:
    paths = write_demo_datasets(Path(out_dir) / "demo_data")
    tasks = {"demo_qs": "question", "demo_ans": "query", "demo_dialog": "dialog"}
    backends = [
        {"name": name, "model_id": f"mock/{name}", "provider": "mock",
         "requests_per_minute": 100_000, "mock": {"behavior": "echo", "words": words}}
        for name, words in zip(("cand-long", "cand-short", "target-base"), itertools.count(16, -5))
    ]
    backends.append({"name": "judge-mock", "model_id": "mock/judge", "provider": "mock",
                     "requests_per_minute": 100_000, "mock": {"behavior": "content", "prefer": "hash"}})
    return {
        "datasets": [{"name": n, "path": str(p.resolve()), "task": tasks[n]} for n, p in paths.items()],
        "backends": backends,
        "models": ["cand-long", "cand-short", "target-base"],
        "target_model": "target-base",
        "judge_model": "judge-mock",
        "seed": 0,
        "parallelism": 4,
        "output_dir": str(out_dir),
    }
