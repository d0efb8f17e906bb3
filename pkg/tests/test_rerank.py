import random

import pytest

import re

from conftest import _below, strength_judge, strength_text
from ragintrinsics import Document, Intrinsics, ScriptedBackend
from ragintrinsics import errors
from ragintrinsics.rerank import rank, round_robin, tournament


def passages(n):
    return [Document(f"p{k}", f"text-{k}") for k in range(n)]


def strength_passages(strengths):
    return [Document(f"p{k}", strength_text(s)) for k, s in enumerate(strengths)]


def strength_callable(strengths):
    return lambda pairs: ["A" if strengths[a] > strengths[b] else "B" for a, b in pairs]


def test_three_passage_round_robin():
    docs = strength_passages([2, 9, 5])
    runner = Intrinsics(strength_judge([2, 9, 5]))
    ranked = runner.rerank("q", docs)
    assert ranked.order == (1, 2, 0)
    assert ranked.win_counts == (0, 2, 1)
    assert ranked.comparisons_used == 3
    assert [p.doc_id for p in ranked.passages] == ["p1", "p2", "p0"]
    assert ranked.method == "round_robin"


def test_single_passage_identity():
    ranked = Intrinsics(ScriptedBackend()).rerank("q", passages(1))
    assert ranked.order == (0,) and ranked.comparisons_used == 0


def test_no_passages():
    with pytest.raises(errors.MissingDocuments):
        Intrinsics(ScriptedBackend()).rerank("q", [])


def test_judge_helper_pattern():
    for v in range(0, 1000, 7):
        pattern = re.compile(f"(?:{_below(v, 3)})\\Z") if v else None
        for w in range(1000):
            hit = bool(pattern and pattern.match(f"{w:03d}"))
            assert hit == (w < v)


def test_pairs_put_lower_index_first():
    seen = []

    def judge(pairs):
        seen.extend(pairs)
        return ["A"] * len(pairs)

    round_robin(5, judge)
    assert all(a < b for a, b in seen) and len(seen) == len(set(seen)) == 10


@pytest.mark.parametrize("seat", [0, 7, 15])
def test_sixteen_passage_tournament(seat):
    strengths = list(range(16))
    strengths[seat], strengths[15] = 100, strengths[seat]
    docs = strength_passages(strengths)
    runner = Intrinsics(strength_judge(strengths))
    ranked = runner.rerank("q", docs)
    assert ranked.method == "tournament"
    assert ranked.order[0] == seat
    assert ranked.comparisons_used == 15
    assert sorted(ranked.order) == list(range(16))


def test_tournament_losers_by_round():
    # strengths equal index reversed: lower index always wins
    order, dropped, used, _ = tournament(8, lambda pairs: ["A"] * len(pairs))
    # round 0 losers 1,3,5,7 ; round 1 losers 2,6 ; round 2 loser 4
    assert order == [0, 4, 2, 6, 1, 3, 5, 7]
    assert dropped == [] and used == 7


def test_tournament_drops_odd_leftover():
    order, dropped, used, _ = tournament(11, lambda pairs: ["A"] * len(pairs))
    # 11 -> drop 10, 5 pairs -> 5 winners -> drop 8, 2 pairs -> 2 -> 1
    assert dropped == [10, 8]
    assert used == 8
    assert sorted(order + dropped) == list(range(11))


def test_parse_failure_goes_to_a_and_is_recorded():
    docs = passages(3)
    backend = ScriptedBackend(strict=False, default="no idea")
    ranked = Intrinsics(backend).rerank("q", docs)
    assert ranked.order == (0, 1, 2)
    assert ranked.fallbacks == ((0, 1), (0, 2), (1, 2))


def test_backend_failure_propagates():
    with pytest.raises(errors.NoScriptMatch):
        Intrinsics(ScriptedBackend()).rerank("q", passages(2))


def test_ten_uses_tournament_nine_round_robin():
    rng = random.Random(3)
    for n, method in [(9, "round_robin"), (10, "tournament")]:
        strengths = rng.sample(range(100), n)
        assert rank(passages(n), strength_callable(strengths)).method == method
