import json
import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_record, outcome_record
from pairjudge.judge import Outcome, Preferred
from pairjudge.report import (
    WinRateRow,
    agreement_metrics,
    bootstrap_ci,
    join_for_agreement,
    largest_remainder,
    load_human_verdicts,
    position_flip_rate,
    render_table,
    win_rates,
)

CW, TW, TIE, ERR = Outcome.CANDIDATE_WIN, Outcome.TARGET_WIN, Outcome.TIE, Outcome.ERRORED
F, S, T, U = Preferred.FIRST, Preferred.SECOND, Preferred.TIE, Preferred.UNPARSEABLE


def records_from_counts(w, l, t, e=0, candidate="cand", dataset="ds"):
    outcomes = [CW] * w + [TW] * l + [TIE] * t + [ERR] * e
    return [outcome_record(o, sample_id=f"s{i:04d}", candidate=candidate, dataset=dataset)
            for i, o in enumerate(outcomes)]


def test_largest_remainder_examples():
    assert largest_remainder([43, 17, 40]) == [43, 17, 40]
    assert largest_remainder([70, 255, 175]) == [14, 51, 35]
    # 33.33 each: floors 33/33/33, the single leftover unit goes to the first class
    assert largest_remainder([1, 1, 1]) == [34, 33, 33]
    assert largest_remainder([1, 2]) == [33, 67]
    with pytest.raises(ValueError):
        largest_remainder([0, 0, 0])


def test_win_rates_counts():
    rows = win_rates(records_from_counts(43, 17, 40))
    assert rows == [WinRateRow("cand", "ds", "tgt", 43, 17, 40, 0)]
    assert rows[0].percentages == (43, 17, 40)
    assert win_rates(records_from_counts(70, 255, 175))[0].percentages == (14, 51, 35)
    assert win_rates(records_from_counts(1, 1, 1))[0].percentages == (34, 33, 33)


def test_errored_excluded_from_denominator():
    row = win_rates(records_from_counts(1, 1, 2, e=6))[0]
    assert (row.errored, row.judged, row.percentages) == (6, 4, (25, 25, 50))


def test_empty_group_row():
    rows = win_rates([], datasets=["ds"], candidates=["c"])
    assert rows[0].percentages is None
    assert "—" in render_table(rows)
    assert win_rates([]) == []


def test_win_rates_mixed_targets_rejected():
    recs = [outcome_record(CW, target="t1"), outcome_record(CW, sample_id="s1", target="t2")]
    with pytest.raises(ValueError):
        win_rates(recs)


def test_win_rates_permutation_invariant():
    recs = records_from_counts(5, 3, 2, 1) + records_from_counts(2, 2, 2, candidate="other", dataset="d2")
    rng = random.Random(3)
    base = win_rates(recs)
    for _ in range(5):
        shuffled = recs[:]
        rng.shuffle(shuffled)
        assert win_rates(shuffled) == base


@settings(max_examples=300, deadline=None)
@given(st.tuples(st.integers(0, 5000), st.integers(0, 5000), st.integers(0, 5000)).filter(lambda c: sum(c) > 0))
def test_rounding_repair_property(counts):
    pct = largest_remainder(list(counts))
    assert sum(pct) == 100
    n = sum(counts)
    for p, c in zip(pct, counts):
        assert abs(Fraction(p) - Fraction(100 * c, n)) < 1


def test_render_markdown_layout():
    recs = records_from_counts(43, 17, 40, candidate="Llama2-70b", dataset="MEDIQA-QS")
    table = render_table(win_rates(recs))
    lines = table.splitlines()
    assert lines[0] == "| Model A Candidates | MEDIQA-QS: Model A | MEDIQA-QS: tgt | MEDIQA-QS: Tie |"
    assert lines[2] == "| Llama2-70b | 43% | 17% | 40% |"
    assert render_table(win_rates(recs)) == table


def test_render_empty_is_header_only():
    table = render_table([])
    assert table.splitlines()[0] == "| Model A Candidates |"
    assert "Llama" not in table


def test_render_csv_and_json():
    rows = win_rates(records_from_counts(1, 1, 1, e=1))
    csv_text = render_table(rows, "csv")
    assert csv_text.splitlines() == [
        "candidate_model,dataset,target_model,wins,losses,ties,errored,win_pct,loss_pct,tie_pct",
        "cand,ds,tgt,1,1,1,1,34,33,33",
    ]
    data = json.loads(render_table(rows, "json"))
    assert data[0]["win_pct"] == 34 and data[0]["errored"] == 1
    with pytest.raises(ValueError):
        render_table(rows, "xlsx")


def oracle_bootstrap(outcome_codes, level, resamples, seed):
    """Loop-based bootstrap with hand-rolled linear percentile."""
    n = len(outcome_codes)
    draws = np.random.default_rng(seed).integers(0, n, size=(resamples, n))
    result = {}
    for cls, name in enumerate(("win", "loss", "tie")):
        rates = []
        for r in range(resamples):
            hits = sum(1 for j in range(n) if outcome_codes[int(draws[r][j])] == cls)
            rates.append(100.0 * hits / n)
        rates.sort()

        def pct(q):
            pos = q / 100 * (resamples - 1)
            lo = math.floor(pos)
            hi = min(lo + 1, resamples - 1)
            return rates[lo] + (rates[hi] - rates[lo]) * (pos - lo)

        result[name] = (pct(100 * (1 - level) / 2), pct(100 * (1 + level) / 2))
    return result


def test_bootstrap_matches_oracle():
    recs = records_from_counts(5, 0, 5)
    got = bootstrap_ci(recs, 0.95, 50, seed=11)
    # records sorted by key: s0000..s0004 wins, s0005..s0009 ties
    codes = [0] * 5 + [2] * 5
    want = oracle_bootstrap(codes, 0.95, 50, 11)
    for k in ("win", "loss", "tie"):
        assert got[k] == pytest.approx(want[k], abs=1e-9)
    assert got["loss"] == (0.0, 0.0)


def test_bootstrap_degenerate_and_deterministic():
    recs = records_from_counts(8, 0, 0)
    assert bootstrap_ci(recs, 0.9, 200, 1)["win"] == (100.0, 100.0)
    mixed = records_from_counts(6, 3, 4)
    assert bootstrap_ci(mixed, 0.95, 300, 5) == bootstrap_ci(list(reversed(mixed)), 0.95, 300, 5)
    with pytest.raises(ValueError):
        bootstrap_ci([], 0.95, 10, 0)
    with pytest.raises(ValueError):
        bootstrap_ci(mixed, 1.0, 10, 0)


def test_position_flip_rate():
    consistent = [make_record(F, S, sample_id=f"s{i}") for i in range(4)]
    biased = [make_record(F, F, sample_id=f"s{i}") for i in range(4)]
    assert position_flip_rate(consistent) == 0.0
    assert position_flip_rate(biased) == 1.0
    assert position_flip_rate(consistent[:3] + biased[:1]) == 0.25
    assert position_flip_rate(consistent + [make_record(U, S, sample_id="u")]) == 0.0
    assert math.isnan(position_flip_rate([]))


def test_agreement_four_item_example():
    rep = agreement_metrics([CW, CW, TW, TIE], [CW, TW, TW, TIE])
    # rows human, cols judge: CW:[1,0,0] TW:[1,1,0] Tie:[0,0,1]
    assert rep.confusion == ((1, 0, 0), (1, 1, 0), (0, 0, 1))
    assert rep.accuracy == 0.75
    # F1 CW = 2*1/(2+1) = 2/3, F1 TW = 2*1/(1+2) = 2/3, F1 Tie = 1
    assert abs(rep.macro_f1 - 7 / 9) < 1e-12


def test_agreement_ten_item_fixture():
    human = [CW, CW, CW, CW, TW, TW, TW, TIE, TIE, TIE]
    judge = [CW, CW, CW, TIE, TW, TW, CW, TIE, TIE, TW]
    rep = agreement_metrics(judge, human)
    assert rep.confusion == ((3, 0, 1), (1, 2, 0), (0, 1, 2))
    assert abs(rep.accuracy - 0.7) < 1e-12
    # F1: CW 6/8, TW 4/6, Tie 4/6 -> macro 25/36
    assert abs(rep.macro_f1 - 25 / 36) < 1e-12


def test_agreement_edges():
    assert agreement_metrics([TIE] * 3, [CW] * 3).accuracy == 0.0
    assert agreement_metrics([TIE] * 3, [CW] * 3).macro_f1 == 0.0
    with pytest.raises(ValueError, match="length"):
        agreement_metrics([CW], [CW, TW])
    with pytest.raises(ValueError, match="filter"):
        agreement_metrics([ERR], [CW])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from([CW, TW, TIE]), min_size=1, max_size=40), st.randoms())
def test_agreement_identity_and_permutation(labels, rnd):
    rep = agreement_metrics(labels, labels)
    assert rep.accuracy == 1.0 and rep.macro_f1 == 1.0
    other = [rnd.choice([CW, TW, TIE]) for _ in labels]
    pairs = list(zip(labels, other))
    rnd.shuffle(pairs)
    a = agreement_metrics(labels, other)
    b = agreement_metrics([p[0] for p in pairs], [p[1] for p in pairs])
    assert (a.accuracy, a.macro_f1, a.confusion) == (b.accuracy, b.macro_f1, b.confusion)


def test_human_file_join(tmp_path):
    recs = [outcome_record(CW, "s1"), outcome_record(TIE, "s2"), outcome_record(ERR, "s3")]
    path = tmp_path / "human.jsonl"
    lines = [
        {"source": "human", "dataset": "ds", "sample_id": "s1", "candidate_model": "cand", "target_model": "tgt",
         "final": {"outcome": "CandidateWin"}},
        {"source": "human", "dataset": "ds", "sample_id": "s2", "candidate_model": "cand", "target_model": "tgt",
         "final": "TargetWin"},
        {"source": "human", "dataset": "ds", "sample_id": "s3", "candidate_model": "cand", "target_model": "tgt",
         "final": "Tie"},
        {"source": "human", "dataset": "ds", "sample_id": "s9", "candidate_model": "cand", "target_model": "tgt",
         "final": "Tie"},
    ]
    path.write_text("".join(json.dumps(x) + "\n" for x in lines))
    human = load_human_verdicts(path)
    j, h, stats = join_for_agreement(recs, human)
    assert j == [CW, TIE] and h == [CW, TW]
    assert stats == {"matched": 2, "judge_errored": 1, "human_errored": 0, "unmatched_human": 1}
