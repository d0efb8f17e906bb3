"""Retrieval and the composite QR/AD flows.

The built-in retriever is a small in-memory tf-idf index: lowercase
alphanumeric tokens, ``idf = ln(1 + N / df)``, score = sum of ``tf * idf``
over the distinct query terms. Anything with a ``retrieve(query, k)``
method returning :class:`ScoredPassage` lists can stand in for it.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import re
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

from . import errors
from .core import Conversation, Document, EndsWith, check_unique_ids, validate_conversation
from .intrinsics import ExpandedQueries, Intrinsics
from .parsing import AnswerabilityLabel

REFUSAL = "I don't know the answer"

_TOKEN_RE = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class ScoredPassage:
    doc: Document
    score: float


class Retriever(Protocol):
    def retrieve(self, query: str, k: int) -> list[ScoredPassage]: ...


def _ranked(scored: Iterable[ScoredPassage]) -> list[ScoredPassage]:
    return sorted(scored, key=lambda p: (-p.score, p.doc.doc_id))


class TfidfIndex:
    """Immutable after construction; safe to share between threads."""

    def __init__(self, docs: Sequence[Document]) -> None:
        if not docs:
            raise errors.EmptyCorpus("cannot index an empty corpus")
        check_unique_ids(docs)
        self.docs: tuple[Document, ...] = tuple(docs)
        self._postings: dict[str, dict[int, int]] = {}
        for pos, doc in enumerate(self.docs):
            text = f"{doc.title} {doc.text}" if doc.title else doc.text
            for term, tf in Counter(tokenize(text)).items():
                self._postings.setdefault(term, {})[pos] = tf
        n = len(self.docs)
        self._idf = {term: math.log(1 + n / len(p)) for term, p in self._postings.items()}

    def __len__(self) -> int:
        return len(self.docs)

    def idf(self, term: str) -> float:
        return self._idf.get(term, 0.0)

    def scores(self, query: str) -> dict[int, float]:
        acc: dict[int, float] = {}
        for term in set(tokenize(query)):
            idf = self._idf.get(term)
            if idf is None:
                continue
            for pos, tf in self._postings[term].items():
                acc[pos] = acc.get(pos, 0.0) + tf * idf
        return acc

    def retrieve(self, query: str, k: int) -> list[ScoredPassage]:
        if k <= 0:
            return []
        hits = (ScoredPassage(self.docs[pos], s) for pos, s in self.scores(query).items() if s > 0)
        return _ranked(hits)[:k]


def index(docs: Sequence[Document]) -> TfidfIndex:
    return TfidfIndex(docs)


def retrieve(handle: Retriever, query: str, k: int) -> list[ScoredPassage]:
    return handle.retrieve(query, k)


def retrieve_union(
    handle: Retriever,
    queries: ExpandedQueries | Iterable[str],
    k_per_query: int = 20,
    cap: int = 100,
) -> list[ScoredPassage]:
    """Union of per-query top-k lists by doc_id, keeping each doc's best score, capped."""
    texts = queries.queries if isinstance(queries, ExpandedQueries) else list(queries)
    best: dict[str, ScoredPassage] = {}
    for query in texts:
        for hit in handle.retrieve(query, k_per_query):
            current = best.get(hit.doc.doc_id)
            if current is None or hit.score > current.score:
                best[hit.doc.doc_id] = hit
    return _ranked(best.values())[:cap]


# -- flows -------------------------------------------------------------------


class FlowKind(str, enum.Enum):
    NONE = "none"
    QR = "qr"
    AD = "ad"
    QR_AD = "qr_ad"


class PostStep(str, enum.Enum):
    HD = "hd"
    UQ = "uq"
    CG = "cg"


@dataclass(frozen=True)
class TraceStep:
    step: str
    input_digest: str
    output_digest: str


@dataclass(frozen=True)
class FlowResult:
    kind: FlowKind
    final_response: str
    abstained: bool
    retrieved: tuple[ScoredPassage, ...]
    trace: tuple[TraceStep, ...]
    rewritten_query: str | None = None
    answerability: AnswerabilityLabel | None = None
    extras: Mapping[str, Any] = field(default_factory=dict)


def digest(value: Any) -> str:
    if not isinstance(value, str):
        value = json.dumps(value, sort_keys=True, ensure_ascii=False, default=str)
    return hashlib.sha256(value.encode("utf-8")).hexdigest()[:16]


def _passages_repr(hits: Sequence[ScoredPassage]) -> list[list[Any]]:
    return [[h.doc.doc_id, round(h.score, 6)] for h in hits]


def run_flow(
    kind: FlowKind | str,
    conv: Conversation,
    retriever: Retriever,
    intrinsics: Intrinsics,
    k: int = 5,
    *,
    generator: Intrinsics | None = None,
    post: Iterable[PostStep | str] = (),
) -> FlowResult:
    """Run one of the four composite flows.

    ``generator`` answers the question (defaults to ``intrinsics``). ``post``
    optionally runs HD/UQ/CG on the generated answer; their outputs land in
    ``extras``. Any failing step raises :class:`FlowError` with the partial trace.
    """
    kind = FlowKind(kind)
    validate_conversation(conv, EndsWith.USER_QUERY)
    generator = generator or intrinsics
    trace: list[TraceStep] = []

    def step(name: str, inp: Any, fn, out_repr=lambda v: v):
        try:
            out = fn()
        except errors.IntrinsicsError as exc:
            raise errors.FlowError(name, exc, list(trace)) from exc
        trace.append(TraceStep(name, digest(inp), digest(out_repr(out))))
        return out

    query = conv.last.content
    rewritten = None
    if kind in (FlowKind.QR, FlowKind.QR_AD):
        rewritten = step("rewrite", conv.to_list(), lambda: intrinsics.rewrite_query(conv).rewritten)
        query = rewritten

    hits = step("retrieve", [query, k], lambda: retriever.retrieve(query, k), _passages_repr)
    docs = [h.doc for h in hits]

    label = None
    if kind in (FlowKind.AD, FlowKind.QR_AD):
        if docs:
            label = step(
                "answerability",
                [conv.to_list(), [d.doc_id for d in docs]],
                lambda: intrinsics.determine_answerability(conv, docs),
                lambda v: v.value,
            )
        else:
            # Nothing retrieved: nothing to ground an answer in.
            label = AnswerabilityLabel.UNANSWERABLE

    if label is AnswerabilityLabel.UNANSWERABLE:
        return FlowResult(kind, REFUSAL, True, tuple(hits), tuple(trace), rewritten, label)

    response = step(
        "generate",
        [conv.to_list(), [d.doc_id for d in docs]],
        lambda: generator.generate_response(conv, docs),
    )

    extras: dict[str, Any] = {}
    answered = conv.append("assistant", response) if response.strip() else None
    for item in dict.fromkeys(PostStep(p) for p in post):
        if answered is None:
            break
        if item is PostStep.UQ:
            score = step("certainty", response, lambda: intrinsics.score_certainty(answered, docs or None), lambda v: v.percent)
            extras["certainty"] = score.percent
        elif not docs:
            continue
        elif item is PostStep.HD:
            report = step("hallucination", response, lambda: intrinsics.detect_hallucinations(answered, docs), lambda v: v.to_wire())
            extras["faithfulness"] = report.mean_faithfulness
            extras["hallucination_flagged"] = report.response_flagged
        elif item is PostStep.CG:
            cites = step("citations", response, lambda: intrinsics.generate_citations(answered, docs), lambda v: v.to_wire())
            extras["citations"] = cites.to_wire()["passage_level"]

    return FlowResult(kind, response, False, tuple(hits), tuple(trace), rewritten, label, extras)


# -- dataset files (JSON lines) ----------------------------------------------


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                value = json.loads(line)
            except json.JSONDecodeError as exc:
                raise errors.InvalidInput(f"{path}:{lineno}: invalid JSON: {exc.msg}") from None
            if not isinstance(value, dict):
                raise errors.InvalidInput(f"{path}:{lineno}: expected a JSON object")
            records.append(value)
    return records


def write_jsonl(path: str | Path, records: Iterable[Mapping[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_conversations(path: str | Path) -> list[tuple[str, Conversation]]:
    out = []
    for n, rec in enumerate(read_jsonl(path)):
        if "turns" not in rec:
            raise errors.InvalidInput(f"{path}: record {n} has no 'turns'")
        out.append((str(rec.get("id", n)), Conversation.from_list(rec["turns"])))
    return out


def load_corpus(path: str | Path) -> list[Document]:
    docs = [Document.from_dict(rec, n) for n, rec in enumerate(read_jsonl(path))]
    check_unique_ids(docs)
    return docs


def load_gold(path: str | Path) -> dict[str, dict[str, Any]]:
    return {str(rec.get("id", n)): rec for n, rec in enumerate(read_jsonl(path))}


def report_record(conv_id: str, result: FlowResult) -> dict[str, Any]:
    """Run-report line: the flow outcome without trace digests."""
    rec: dict[str, Any] = {
        "id": conv_id,
        "flow": result.kind.value,
        "final_response": result.final_response,
        "abstained": result.abstained,
        "rewritten_query": result.rewritten_query,
        "retrieved": [{"doc_id": h.doc.doc_id, "score": round(h.score, 6)} for h in result.retrieved],
        "answerability": result.answerability.value if result.answerability else None,
        "steps": [t.step for t in result.trace],
    }
    rec.update(result.extras)
    return rec
