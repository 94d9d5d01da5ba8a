import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsdh.errors import DataError
from bsdh.index import CodeDatabase, pack_codes
from bsdh.metrics import (
    RelevanceJudge,
    average_precision,
    cmc,
    evaluate,
    first_hit_rank,
    ham2_precision,
    mean_average_precision,
    precision_at_k,
    write_precision_curve,
    write_reports_csv,
    write_reports_jsonl,
)


def oracle_ap(rel):
    hits, total = 0, 0.0
    for r, x in enumerate(rel, start=1):
        if x:
            hits += 1
            total += hits / r
    return total / hits if hits else 0.0


def make_db(codes, weights=None, ids=None):
    codes = np.asarray(codes)
    w = np.ones(codes.shape[1]) if weights is None else weights
    return CodeDatabase.build(w, pack_codes(codes), ids)


# -- average precision ----------------------------------------------------------

def test_ap_examples():
    assert average_precision([1, 0, 1]) == pytest.approx((1 + 2 / 3) / 2)
    assert average_precision([1, 1, 1, 1]) == 1.0
    assert average_precision([0, 0, 0]) == 0.0


def test_ap_cutoff_limits_summation_only():
    # relevant at ranks 1 and 4; cutoff 2 keeps only the first term but divides by 2
    assert average_precision([1, 0, 0, 1], cutoff=2) == pytest.approx(0.5)


@given(st.lists(st.booleans(), min_size=1, max_size=60))
def test_ap_matches_oracle(rel):
    assert average_precision(rel) == pytest.approx(oracle_ap(rel))
    assert 0.0 <= average_precision(rel) <= 1.0


# -- precision@k ------------------------------------------------------------------

def test_precision_examples():
    assert precision_at_k([1, 0, 0], 1) == 1.0
    assert precision_at_k([1, 0, 1], 3) == pytest.approx(2 / 3)
    assert precision_at_k([1, 1], 4) == 0.5
    with pytest.raises(DataError):
        precision_at_k([1], 0)


# -- CMC --------------------------------------------------------------------------

def test_cmc_examples():
    assert cmc([1, 1, 1], 3)[0] == 1.0
    np.testing.assert_array_equal(cmc([1, 3], 4), [0.5, 0.5, 1.0, 1.0])
    with pytest.raises(DataError):
        first_hit_rank([0, 0, 0])


@settings(max_examples=30)
@given(st.lists(st.integers(1, 20), min_size=1, max_size=30))
def test_cmc_nondecreasing_and_reaches_one(ranks):
    curve = cmc(ranks, 20)
    assert np.all(np.diff(curve) >= 0)
    assert curve[-1] == 1.0
    for r in (1, 5, 13):
        assert curve[r - 1] == sum(x <= r for x in ranks) / len(ranks)


# -- relevance judge ----------------------------------------------------------------

def test_judge_modes():
    judge = RelevanceJudge([3, 1, 2], [5, 5, 6])
    np.testing.assert_array_equal(judge.relevant(3, [1, 2]), [True, False])
    tags = RelevanceJudge([0, 1, 2], [{"a", "b"}, {"b"}, {"c"}], mode="shared-tag")
    np.testing.assert_array_equal(tags.relevant(0, [1, 2]), [True, False])
    with pytest.raises(DataError):
        RelevanceJudge([0, 1], [{"a"}, {"b"}], mode="class")
    with pytest.raises(DataError):
        judge.relevant(99, [1])


# -- MAP --------------------------------------------------------------------------

def test_map_every_item_own_class_is_zero():
    codes = np.array([[1, 1, -1, -1], [1, -1, 1, -1], [-1, -1, 1, 1]])
    db = make_db(codes)
    judge = RelevanceJudge([0, 1, 2], [0, 1, 2])
    assert mean_average_precision(pack_codes(codes), [0, 1, 2], db, judge, leave_one_out=True) == 0.0


def test_map_perfect_separation():
    codes = np.array([[1, 1, 1, 1]] * 3 + [[-1, -1, -1, -1]] * 3)
    db = make_db(codes)
    judge = RelevanceJudge(range(6), [0, 0, 0, 1, 1, 1])
    assert mean_average_precision(pack_codes(codes), list(range(6)), db, judge, leave_one_out=True) == 1.0


def test_map_toy_instance_by_hand():
    # unit weights, 4 bits; ranking by Hamming distance, ties by id
    codes = np.array([
        [1, 1, 1, 1],     # id 0, class 0
        [1, 1, 1, -1],    # id 1, class 1
        [1, 1, -1, -1],   # id 2, class 0
        [-1, -1, -1, -1],  # id 3, class 1
        [1, -1, -1, -1],  # id 4, class 0
    ])
    labels = [0, 1, 0, 1, 0]
    db = make_db(codes)
    judge = RelevanceJudge(range(5), labels)
    q = pack_codes(codes)
    aps = []
    for qi in range(5):
        others = [j for j in range(5) if j != qi]
        dist = {j: int(np.sum(codes[j] != codes[qi])) for j in others}
        order = sorted(others, key=lambda j: (dist[j], j))
        aps.append(oracle_ap([labels[j] == labels[qi] for j in order]))
    got = mean_average_precision(q, list(range(5)), db, judge, leave_one_out=True)
    assert got == pytest.approx(np.mean(aps), abs=1e-15)
    # query 0 by hand: distances 1:1, 2:2, 4:3, 3:4 -> relevance [0,1,1,0]
    assert aps[0] == pytest.approx((1 / 2 + 2 / 3) / 2)


def test_leave_one_out_changes_candidates():
    codes = np.array([[1, 1], [1, -1], [-1, -1]])
    db = make_db(codes)
    judge = RelevanceJudge(range(3), [0, 1, 0])
    q = pack_codes(codes)
    with_self = mean_average_precision(q, [0, 1, 2], db, judge)
    without = mean_average_precision(q, [0, 1, 2], db, judge, leave_one_out=True)
    # with itself: query 0 ranks [0,1,2] -> AP (1 + 2/3)/2; query 1 -> 1; query 2 -> (1 + 2/3)/2
    assert with_self == pytest.approx(((1 + 2 / 3) / 2 * 2 + 1) / 3)
    # without: query 0 ranks [1,2] -> 1/2; query 1 has no relevant -> 0; query 2 -> 1/2
    assert without == pytest.approx((0.5 + 0 + 0.5) / 3)


def test_map_invariant_under_monotone_weight_scaling():
    rng = np.random.default_rng(0)
    codes = rng.choice([-1, 1], (40, 12))
    labels = rng.integers(0, 4, 40)
    w = rng.uniform(0.5, 2, 12)
    judge = RelevanceJudge(range(40), labels)
    q = pack_codes(codes)
    a = mean_average_precision(q, list(range(40)), make_db(codes, w), judge, leave_one_out=True)
    b = mean_average_precision(q, list(range(40)), make_db(codes, w * 4.0), judge, leave_one_out=True)
    assert a == b


def test_lut_and_bruteforce_metrics_agree():
    rng = np.random.default_rng(1)
    codes = rng.choice([-1, 1], (60, 16))
    labels = rng.integers(0, 5, 60)
    db = make_db(codes, np.full(16, 0.3))
    judge = RelevanceJudge(range(60), labels)
    q = pack_codes(codes[:20])
    a = evaluate(q, list(range(20)), db, judge, engine="lut", with_cmc=False)
    b = evaluate(q, list(range(20)), db, judge, engine="bruteforce", with_cmc=False)
    assert a == b


def test_empty_queries_and_bad_engine():
    db = make_db(np.ones((2, 8)))
    judge = RelevanceJudge([0, 1], [0, 0])
    with pytest.raises(DataError):
        mean_average_precision(np.zeros((0, 1), np.uint8), [], db, judge)
    with pytest.raises(DataError):
        mean_average_precision(pack_codes(np.ones((1, 8))), [0], db, judge, engine="nope")


# -- HAM2 -------------------------------------------------------------------------

def test_ham2_examples():
    q = np.array([1, 1, 1, 1, 1, 1, 1, 1])
    far = -q
    db = make_db(np.stack([q, far, far]), ids=[0, 1, 2])
    judge = RelevanceJudge([0, 1, 2, 9], [0, 1, 1, 0])
    assert ham2_precision(pack_codes(q[None])[0], 9, db, judge) == 1.0
    assert ham2_precision(pack_codes(np.array([[1, 1, 1, 1, -1, -1, -1, -1]]))[0], 9, db, judge) == 0.0


def test_ham2_constructed_six_codes():
    base = np.ones(8, dtype=int)
    def flip(k):
        c = base.copy()
        c[:k] = -1
        return c
    codes = np.stack([flip(0), flip(1), flip(2), flip(3), flip(5), flip(8)])
    labels = [0, 1, 0, 0, 0, 1]
    db = make_db(codes, ids=range(6))
    judge = RelevanceJudge(list(range(6)) + [99], labels + [0])
    # ball of radius 2 holds ids 0, 1, 2 of which 0 and 2 share the query's class
    assert ham2_precision(pack_codes(base[None])[0], 99, db, judge) == pytest.approx(2 / 3)


def test_ham2_uses_unweighted_distance():
    base = np.ones(4, dtype=int)
    near = base.copy()
    near[0] = -1
    db = make_db(np.stack([near]), weights=np.array([10.0, 0.1, 0.1, 0.1]), ids=[0])
    judge = RelevanceJudge([0, 5], [0, 0])
    assert ham2_precision(pack_codes(base[None])[0], 5, db, judge) == 1.0


# -- reports ---------------------------------------------------------------------

def test_report_values_in_range_and_writers(tmp_path):
    rng = np.random.default_rng(3)
    codes = rng.choice([-1, 1], (50, 16))
    labels = np.repeat(np.arange(5), 10)
    db = make_db(codes, rng.normal(size=16))
    judge = RelevanceJudge(range(50), labels)
    reports = [evaluate(pack_codes(codes), list(range(50)), db, judge, k_bits=k, leave_one_out=True, with_cmc=True)
               for k in (8, 16)]
    for r in reports:
        assert 0 <= r.map <= 1 and 0 <= r.precision_at_500 <= 1 and 0 <= r.ham2_precision <= 1
        assert all(0 <= v <= 1 for v in r.precision_at_k.values())
        assert np.all(np.diff(r.cmc) >= 0) and r.cmc[-1] == 1.0
    write_reports_csv(reports, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "bits,n_queries,map,precision_at_500,ham2"
    assert len(lines) == 3
    write_reports_jsonl(reports, tmp_path / "r.jsonl")
    rows = [json.loads(x) for x in (tmp_path / "r.jsonl").read_text().splitlines()]
    assert rows[1]["bits"] == 16 and rows[1]["map"] == reports[1].map
    write_precision_curve(reports[0], tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "k,precision"
