import json
import logging
import subprocess
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dialog_records, query_records, question_records, write_jsonl
from oracles import oracle_subsample_ids
from pairjudge.dataset import (
    DatasetError,
    Sample,
    SampleSet,
    SplitMix64,
    TaskKind,
    Turn,
    dump_dataset,
    load_dataset,
    scan_dataset,
    subsample,
    validate_sample,
)


def test_splitmix64_reference_vector():
    # published reference outputs for seed 1234567
    rng = SplitMix64(1234567)
    assert [rng.next() for _ in range(5)] == [
        6457827717110365317, 3203168211198807973, 9817491932198370423,
        4593380528125082431, 16408922859458223821,
    ]


def test_load_question_file_of_100(tmp_path):
    path = write_jsonl(tmp_path / "qs.jsonl", question_records(100))
    ss = load_dataset(path, TaskKind.QUESTION)
    assert len(ss) == 100
    assert ss.task is TaskKind.QUESTION
    assert ss.ids[:3] == ["q0", "q1", "q2"]
    assert ss.dataset_name == "qs"
    assert len(ss.digest) == 64


def test_empty_file_warns(tmp_path, caplog):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    with caplog.at_level(logging.WARNING):
        ss = load_dataset(path, "question")
    assert len(ss) == 0
    assert "empty" in caplog.text


def test_missing_document_reports_line(tmp_path):
    records = query_records(4)
    del records[2]["document"]
    path = write_jsonl(tmp_path / "ans.jsonl", records)
    with pytest.raises(DatasetError, match="document") as err:
        load_dataset(path, TaskKind.QUERY)
    assert err.value.line == 3


def test_extra_field_is_rejected(tmp_path):
    records = question_records(2)
    records[1]["answer"] = "x"
    path = write_jsonl(tmp_path / "q.jsonl", records)
    with pytest.raises(DatasetError, match="'answer'") as err:
        load_dataset(path, TaskKind.QUESTION)
    assert err.value.line == 2


def test_kind_mismatch_is_schema_error(tmp_path):
    path = write_jsonl(tmp_path / "q.jsonl", query_records(2))
    with pytest.raises(DatasetError, match="not allowed"):
        load_dataset(path, TaskKind.QUESTION)


def test_duplicate_ids_rejected(tmp_path):
    records = question_records(3)
    records[2]["id"] = "q0"
    with pytest.raises(DatasetError, match="duplicate"):
        load_dataset(write_jsonl(tmp_path / "q.jsonl", records), "question")


def test_invalid_json_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a", "question": "x"}\n{not json\n')
    with pytest.raises(DatasetError) as err:
        load_dataset(path, "question")
    assert err.value.line == 2


def test_scan_collects_all_problems(tmp_path):
    records = question_records(5)
    records[1]["question"] = "   "
    records[3]["extra"] = 1
    samples, problems = scan_dataset(write_jsonl(tmp_path / "q.jsonl", records), "question")
    assert len(samples) == 3
    assert [p.split(":")[0] for p in problems] == ["line 2", "line 4"]


def test_validate_sample_rules():
    assert validate_sample(Sample("x", TaskKind.QUESTION, question="Is X safe?")) == []
    v = validate_sample(Sample("x", TaskKind.QUESTION, question=""))
    assert [str(x) for x in v] == ["question: empty"]
    turns = (Turn("Patient", "hi"), Turn("Doctor", "hello"), Turn(" ", "ok"))
    v = validate_sample(Sample("x", TaskKind.DIALOG, dialogue=turns))
    assert [str(x) for x in v] == ["turn 3: speaker empty"]
    v = validate_sample(Sample("x", TaskKind.QUERY, question="q"))
    assert v[0].field == "document"


def test_round_trip(tmp_path):
    for kind, records in ((TaskKind.QUESTION, question_records(5)), (TaskKind.QUERY, query_records(5)),
                          (TaskKind.DIALOG, dialog_records(5))):
        ss = load_dataset(write_jsonl(tmp_path / f"{kind.name}.jsonl", records), kind)
        out = tmp_path / f"{kind.name}_copy.jsonl"
        dump_dataset(ss, out)
        again = load_dataset(out, kind)
        assert again.samples == ss.samples


def test_digest_tracks_bytes(tmp_path):
    path = write_jsonl(tmp_path / "q.jsonl", question_records(3))
    d1 = load_dataset(path, "question").digest
    assert load_dataset(path, "question").digest == d1
    path.write_text(path.read_text() + "\n")
    assert load_dataset(path, "question").digest != d1


def _set(ids):
    return SampleSet("s", TaskKind.QUESTION, tuple(Sample(i, TaskKind.QUESTION, question="q") for i in ids))


def test_subsample_full_set_keeps_order():
    assert subsample(_set(list("abcde")), 5, 7).ids == list("abcde")


def test_subsample_too_many():
    with pytest.raises(ValueError):
        subsample(_set(list("abc")), 4, 1)


def test_subsample_matches_oracle():
    ids = [f"ic{i:04d}" for i in range(1000)]
    got = subsample(_set(ids), 200, 42).ids
    assert got == oracle_subsample_ids(ids, 200, 42)
    assert len(got) == 200 and len(set(got)) == 200
    assert got == sorted(got, key=ids.index)


def test_subsample_stable_across_processes():
    code = ("from pairjudge.dataset import *\n"
            "ids=[f'ic{i:04d}' for i in range(1000)]\n"
            "ss=SampleSet('s',TaskKind.DIALOG,tuple(Sample(i,TaskKind.DIALOG,dialogue=(Turn('P','x'),)) for i in ids))\n"
            "import json; print(json.dumps(subsample(ss,200,42).ids))")
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
    ids = [f"ic{i:04d}" for i in range(1000)]
    assert json.loads(out) == subsample(_set(ids), 200, 42).ids


@settings(max_examples=60, deadline=None)
@given(n=st.integers(0, 60), data=st.data(), seed=st.integers(0, 2**64 - 1))
def test_subsample_properties(n, data, seed):
    ids = [f"x{i}" for i in range(n)]
    k = data.draw(st.integers(0, n))
    got = subsample(_set(ids), k, seed).ids
    assert got == oracle_subsample_ids(ids, k, seed)
    assert got == subsample(_set(ids), k, seed).ids
    assert got == [i for i in ids if i in set(got)]
