"""Pairwise passage ranking: round-robin below 10 passages, single elimination above.

The algorithms only see passage indices and a ``judge`` callable that takes
one round's worth of ``(a, b)`` index pairs and returns, per pair, the
winner's side (``"A"``/``"B"``) or ``None`` when the judgement was unusable.
Unusable judgements go to passage A and are recorded.
"""

from __future__ import annotations

import itertools
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Literal

from .core import Document

ROUND_ROBIN_LIMIT = 10

Judge = Callable[[Sequence[tuple[int, int]]], Sequence[str | None]]


@dataclass(frozen=True)
class RankedPassages:
    order: tuple[int, ...]
    passages: tuple[Document, ...]
    method: Literal["identity", "round_robin", "tournament"]
    comparisons_used: int
    win_counts: tuple[int, ...] | None = None
    dropped: tuple[int, ...] = ()
    fallbacks: tuple[tuple[int, int], ...] = ()

    def to_wire(self) -> dict:
        return {
            "ranking": [p.doc_id for p in self.passages],
            "method": self.method,
            "comparisons": self.comparisons_used,
            "win_counts": list(self.win_counts) if self.win_counts is not None else None,
            "dropped": list(self.dropped),
            "fallbacks": [list(pair) for pair in self.fallbacks],
        }


def _decide(judge: Judge, pairs: list[tuple[int, int]], fallbacks: list) -> list[int]:
    verdicts = list(judge(pairs))
    if len(verdicts) != len(pairs):
        raise RuntimeError(f"judge returned {len(verdicts)} verdicts for {len(pairs)} pairs")
    winners = []
    for (a, b), verdict in zip(pairs, verdicts):
        if verdict not in ("A", "B"):
            fallbacks.append((a, b))
            verdict = "A"
        winners.append(a if verdict == "A" else b)
    return winners


def round_robin(n: int, judge: Judge) -> tuple[list[int], list[int], int, list]:
    """Judge all unordered pairs once (lower index as A). Returns (order, wins, comparisons, fallbacks)."""
    pairs = list(itertools.combinations(range(n), 2))
    fallbacks: list[tuple[int, int]] = []
    wins = [0] * n
    if pairs:
        for winner in _decide(judge, pairs, fallbacks):
            wins[winner] += 1
    order = sorted(range(n), key=lambda i: (-wins[i], i))
    return order, wins, len(pairs), fallbacks


def tournament(n: int, judge: Judge) -> tuple[list[int], list[int], int, list]:
    """Single elimination over positions in original order.

    Each round pairs neighbours (0,1), (2,3), ...; an odd leftover is dropped.
    Returns (order, dropped, comparisons, fallbacks) where ``order`` is the
    champion followed by losers from later rounds first, ties by index.
    """
    alive = list(range(n))
    eliminated: list[tuple[int, int]] = []  # (round, index)
    dropped: list[int] = []
    fallbacks: list[tuple[int, int]] = []
    comparisons = 0
    rnd = 0
    while len(alive) > 1:
        if len(alive) % 2:
            dropped.append(alive.pop())
        pairs = [(alive[k], alive[k + 1]) for k in range(0, len(alive), 2)]
        winners = _decide(judge, pairs, fallbacks)
        comparisons += len(pairs)
        for (a, b), w in zip(pairs, winners):
            eliminated.append((rnd, b if w == a else a))
        alive = winners
        rnd += 1
    losers = sorted(eliminated, key=lambda e: (-e[0], e[1]))
    return alive + [idx for _, idx in losers], dropped, comparisons, fallbacks


def rank(passages: Sequence[Document], judge: Judge) -> RankedPassages:
    n = len(passages)
    if n == 0:
        raise ValueError("no passages to rank")
    if n == 1:
        return RankedPassages((0,), (passages[0],), "identity", 0)
    if n < ROUND_ROBIN_LIMIT:
        order, wins, used, fallbacks = round_robin(n, judge)
        return RankedPassages(
            tuple(order),
            tuple(passages[i] for i in order),
            "round_robin",
            used,
            win_counts=tuple(wins),
            fallbacks=tuple(fallbacks),
        )
    order, dropped, used, fallbacks = tournament(n, judge)
    return RankedPassages(
        tuple(order),
        tuple(passages[i] for i in order),
        "tournament",
        used,
        dropped=tuple(dropped),
        fallbacks=tuple(fallbacks),
    )
