"""Parse raw completions into typed intrinsic results.

Policy: extraction is lenient (first well-formed JSON value, first token,
leading integer), validation afterwards is strict. Every parser accepts
``str`` or ``bytes`` and either returns a valid value or raises a
:class:`~ragintrinsics.errors.ParseError` subclass.
"""

from __future__ import annotations

import enum
import json
import re
import string
from collections.abc import Callable, Iterator
from dataclasses import dataclass
from typing import Any

from . import errors

CERTAINTY_LEVELS = (5, 15, 25, 35, 45, 55, 65, 75, 85, 95)

_decoder = json.JSONDecoder()


def _as_text(text: str | bytes) -> str:
    if isinstance(text, bytes):
        return text.decode("utf-8", errors="replace")
    if not isinstance(text, str):
        raise errors.MalformedOutput(f"expected text, got {type(text).__name__}")
    return text


def _json_values(text: str) -> Iterator[Any]:
    """Yield every JSON object/array that decodes cleanly, scanning left to right."""
    pos = 0
    while True:
        starts = [i for i in (text.find("{", pos), text.find("[", pos)) if i >= 0]
        if not starts:
            return
        start = min(starts)
        try:
            value, end = _decoder.raw_decode(text, start)
        except (ValueError, RecursionError):
            pos = start + 1
            continue
        yield value
        pos = end


def first_json(text: str, accept: Callable[[Any], bool]) -> Any:
    for value in _json_values(text):
        if accept(value):
            return value
    raise errors.MalformedOutput("no acceptable JSON value found", text)


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _normalize_ws(text: str) -> str:
    return " ".join(text.split())


# -- query rewrite -----------------------------------------------------------


@dataclass(frozen=True)
class RewriteResult:
    rewritten: str
    unchanged: bool

    def to_wire(self) -> dict[str, Any]:
        return {"rewritten_question": self.rewritten, "unchanged": self.unchanged}


def parse_rewrite(text: str | bytes, original: str | None = None) -> RewriteResult:
    text = _as_text(text)
    obj = first_json(text, lambda v: isinstance(v, dict) and "rewritten_question" in v)
    value = obj["rewritten_question"]
    if not isinstance(value, str):
        raise errors.MalformedOutput("rewritten_question must be a string", text)
    if not value.strip():
        raise errors.EmptyRewrite("rewritten_question is empty", text)
    unchanged = original is not None and _normalize_ws(value) == _normalize_ws(original)
    return RewriteResult(value, unchanged)


# -- context relevance / answerability ---------------------------------------


class RelevanceLabel(str, enum.Enum):
    RELEVANT = "relevant"
    PARTIALLY_RELEVANT = "partially_relevant"
    IRRELEVANT = "irrelevant"

    @property
    def wire(self) -> str:
        return self.value.replace("_", " ")


def parse_relevance(text: str | bytes) -> RelevanceLabel:
    text = _as_text(text)
    obj = first_json(text, lambda v: isinstance(v, dict) and "context_relevance" in v)
    value = obj["context_relevance"]
    if not isinstance(value, str):
        raise errors.UnknownLabel(f"context_relevance must be a string, got {value!r}", text)
    key = "_".join(value.strip().lower().replace("-", " ").replace("_", " ").split())
    try:
        return RelevanceLabel(key)
    except ValueError:
        raise errors.UnknownLabel(f"unknown relevance label {value!r}", text) from None


class AnswerabilityLabel(str, enum.Enum):
    ANSWERABLE = "answerable"
    UNANSWERABLE = "unanswerable"


_STRIP = string.punctuation + "“”‘’"


def parse_answerability(text: str | bytes) -> AnswerabilityLabel:
    text = _as_text(text)
    tokens = text.split()
    token = tokens[0].strip(_STRIP).lower() if tokens else ""
    try:
        return AnswerabilityLabel(token)
    except ValueError:
        raise errors.UnknownLabel(f"expected answerable/unanswerable, got {token!r}", text) from None


# -- certainty ---------------------------------------------------------------


@dataclass(frozen=True)
class CertaintyScore:
    percent: int
    raw: str
    normalized: bool = False

    def __post_init__(self) -> None:
        if self.percent not in CERTAINTY_LEVELS:
            raise ValueError(f"certainty {self.percent} is not one of {CERTAINTY_LEVELS}")

    @property
    def probability(self) -> float:
        return self.percent / 100.0

    def to_wire(self) -> dict[str, Any]:
        return {"certainty": self.percent, "normalized": self.normalized, "raw": self.raw}


_PERCENT_RE = re.compile(r"\s*(\d{1,3})\s*%?")


def snap_certainty(value: int) -> int:
    """Nearest quantized level; exact ties go to the lower level."""
    return min(CERTAINTY_LEVELS, key=lambda level: (abs(level - value), level))


def parse_certainty(text: str | bytes) -> CertaintyScore:
    text = _as_text(text)
    match = _PERCENT_RE.match(text)
    if match is None:
        raise errors.NoPercentage("completion does not start with a percentage", text)
    value = int(match.group(1))
    if value > 100:
        raise errors.NoPercentage(f"{value}% is not a percentage", text)
    snapped = snap_certainty(value)
    return CertaintyScore(snapped, text, normalized=snapped != value)


# -- hallucination detection -------------------------------------------------


class Faithfulness(str, enum.Enum):
    FAITHFUL = "faithful"
    UNFAITHFUL = "unfaithful"
    PARTIAL = "partial"
    NA = "NA"


_FAITHFULNESS = {label.value.lower(): label for label in Faithfulness}


@dataclass(frozen=True)
class SentenceVerdict:
    i: int
    f: Faithfulness
    r: str

    def to_wire(self) -> dict[str, Any]:
        return {"i": self.i, "f": self.f.value, "r": self.r}


def _list_payload(value: Any) -> list | None:
    """A bare list, or an object with exactly one list-valued field."""
    if isinstance(value, list):
        return value
    if isinstance(value, dict):
        lists = [v for v in value.values() if isinstance(v, list)]
        if len(lists) == 1:
            return lists[0]
    return None


def _items(text: str) -> list[dict]:
    payload = _list_payload(first_json(text, lambda v: _list_payload(v) is not None))
    if not all(isinstance(item, dict) for item in payload):
        raise errors.MalformedOutput("list items must be objects", text)
    return payload


def parse_hallucination(text: str | bytes, n_sentences: int) -> list[SentenceVerdict]:
    """Verdicts sorted by sentence id; every id in ``range(n_sentences)`` exactly once."""
    text = _as_text(text)
    verdicts: dict[int, SentenceVerdict] = {}
    for item in _items(text):
        i, f, r = item.get("i"), item.get("f"), item.get("r")
        if not _is_int(i) or not isinstance(f, str) or not isinstance(r, str):
            raise errors.MalformedOutput(f"bad verdict entry {item!r}", text)
        label = _FAITHFULNESS.get(f.strip().lower())
        if label is None:
            raise errors.UnknownLabel(f"unknown faithfulness label {f!r}", text)
        if not 0 <= i < n_sentences:
            raise errors.OutputIdOutOfRange(i, n_sentences, "response sentence", raw=text)
        if i in verdicts:
            raise errors.DuplicateSentenceId(i, text)
        verdicts[i] = SentenceVerdict(i, label, r)
    missing = [k for k in range(n_sentences) if k not in verdicts]
    if missing:
        raise errors.MissingSentenceIds(missing, text)
    return [verdicts[k] for k in range(n_sentences)]


# -- citation generation -----------------------------------------------------


@dataclass(frozen=True)
class CitationLink:
    r: int
    c: tuple[int, ...]

    def to_wire(self) -> dict[str, Any]:
        return {"r": self.r, "c": list(self.c)}


def parse_citations(text: str | bytes, n_response: int, n_context: int) -> list[CitationLink]:
    """Citation links sorted by response id. Uncited sentences may be absent or have ``c == []``."""
    text = _as_text(text)
    links: dict[int, CitationLink] = {}
    for item in _items(text):
        r, c = item.get("r"), item.get("c")
        if not _is_int(r) or not isinstance(c, list) or not all(_is_int(x) for x in c):
            raise errors.MalformedOutput(f"bad citation entry {item!r}", text)
        if not 0 <= r < n_response:
            raise errors.OutputIdOutOfRange(r, n_response, "response sentence", raw=text)
        for cid in c:
            if not 0 <= cid < n_context:
                raise errors.OutputIdOutOfRange(cid, n_context, "context sentence", raw=text)
        if r in links:
            raise errors.DuplicateSentenceId(r, text)
        links[r] = CitationLink(r, tuple(dict.fromkeys(c)))
    return [links[k] for k in sorted(links)]


# -- pairwise preference -----------------------------------------------------


class Preference(str, enum.Enum):
    A = "A"
    B = "B"


# Uppercase only: a lowercase "a" is almost always the English article.
_PREFERENCE_RE = re.compile(r"(?<![0-9A-Za-z_])([AB])(?![0-9A-Za-z_])")


def parse_preference(text: str | bytes) -> Preference:
    text = _as_text(text)
    match = _PREFERENCE_RE.search(text)
    if match is None:
        raise errors.NoPreferenceToken("no standalone A or B in judge output", text)
    return Preference(match.group(1))
