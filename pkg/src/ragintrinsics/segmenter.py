"""Rule-based sentence splitting with UTF-8 byte spans, and sentence-ID tagging.

Splitting rules (closed set, no tokenizer model):

* a sentence ends after a run of ``.``, ``!`` or ``?``, plus any closing
  quotes or brackets that immediately follow;
* the terminator must be followed by whitespace and then an uppercase
  letter, an opening quote, or a digit;
* a single ``.`` closing one of :data:`ABBREVIATIONS` never ends a sentence.

Decimal numbers need no special case: ``3.14`` has no whitespace after the dot.
"""

from __future__ import annotations

import enum
import itertools
import re
from collections.abc import Sequence
from dataclasses import dataclass

from . import errors
from .core import Document

TERMINATORS = frozenset(".!?")
CLOSERS = frozenset("\"')]}’”»")
OPENING_QUOTES = frozenset("\"'“‘«")
ABBREVIATIONS = frozenset({"Mr.", "Mrs.", "Dr.", "e.g.", "i.e.", "etc.", "vs.", "Fig.", "No.", "U.S."})
_LEADING_PUNCT = "\"'([{“‘«"

TAG_RE = re.compile(r"<([irc])(\d+)> ")


class Scheme(str, enum.Enum):
    I = "i"  # noqa: E741  hallucination detection response ids
    R = "r"  # citation response ids
    C = "c"  # citation context ids


@dataclass(frozen=True)
class SentenceSpan:
    index: int
    start: int  # byte offset, inclusive
    end: int  # byte offset, exclusive

    def __post_init__(self) -> None:
        if self.index < 0 or self.start < 0 or self.start >= self.end:
            raise ValueError(f"invalid span {self!r}")


def _is_abbreviation(text: str, dot: int) -> bool:
    start = dot
    while start > 0 and not text[start - 1].isspace():
        start -= 1
    token = text[start : dot + 1].lstrip(_LEADING_PUNCT)
    return token in ABBREVIATIONS


def _char_spans(text: str) -> list[tuple[int, int]]:
    """Sentence boundaries as ``(start, end)`` character indices, whitespace-trimmed."""
    n = len(text)
    cuts: list[int] = []
    i = 0
    while i < n:
        if text[i] not in TERMINATORS:
            i += 1
            continue
        j = i
        while j < n and text[j] in TERMINATORS:
            j += 1
        k = j
        while k < n and text[k] in CLOSERS:
            k += 1
        w = k
        while w < n and text[w].isspace():
            w += 1
        if w > k and w < n:
            nxt = text[w]
            if nxt.isupper() or nxt.isdigit() or nxt in OPENING_QUOTES:
                single_dot = j - i == 1 and text[i] == "."
                if not (single_dot and _is_abbreviation(text, i)):
                    cuts.append(k)
        i = k
    cuts.append(n)

    spans: list[tuple[int, int]] = []
    prev = 0
    for cut in cuts:
        s, e = prev, cut
        while s < e and text[s].isspace():
            s += 1
        while e > s and text[e - 1].isspace():
            e -= 1
        if s < e:
            spans.append((s, e))
        prev = cut
    return spans


def _byte_offsets(text: str) -> list[int]:
    """``offsets[c]`` is the UTF-8 byte offset of character ``c`` (length ``len(text) + 1``)."""
    sizes = (len(ch.encode("utf-8", "surrogatepass")) for ch in text)
    return [0, *itertools.accumulate(sizes)]


def split_sentences(text: str) -> list[SentenceSpan]:
    """Split ``text`` into sentence spans over its UTF-8 bytes. Empty text gives ``[]``."""
    offsets = _byte_offsets(text)
    return [
        SentenceSpan(k, offsets[s], offsets[e]) for k, (s, e) in enumerate(_char_spans(text))
    ]


def span_text(text: str, span: SentenceSpan) -> str:
    return text.encode("utf-8", "surrogatepass")[span.start : span.end].decode("utf-8", "surrogatepass")


def format_tag(scheme: Scheme | str, index: int) -> str:
    return f"<{Scheme(scheme).value}{index}>"


@dataclass(frozen=True)
class TaggedText:
    original: str
    spans: tuple[SentenceSpan, ...]
    scheme: Scheme
    rendered: str
    first_id: int = 0  # id carried by the first sentence

    def __len__(self) -> int:
        return len(self.spans)

    @property
    def ids(self) -> range:
        return range(self.first_id, self.first_id + len(self.spans))

    def sentence(self, local_index: int) -> str:
        return span_text(self.original, self.spans[local_index])

    def sentences(self) -> list[str]:
        return [span_text(self.original, s) for s in self.spans]

    def untag(self) -> str:
        """Remove exactly the inserted tags, giving back ``original``."""
        return strip_tags(self.rendered)


def strip_tags(rendered: str) -> str:
    return TAG_RE.sub("", rendered)


def _tag(text: str, scheme: Scheme, first_id: int) -> TaggedText:
    char_spans = _char_spans(text)
    offsets = _byte_offsets(text)
    parts: list[str] = []
    prev = 0
    for k, (s, _) in enumerate(char_spans):
        parts.append(text[prev:s])
        parts.append(f"{format_tag(scheme, first_id + k)} ")
        prev = s
    parts.append(text[prev:])
    spans = tuple(SentenceSpan(k, offsets[s], offsets[e]) for k, (s, e) in enumerate(char_spans))
    return TaggedText(text, spans, scheme, "".join(parts), first_id)


def tag_response(response: str, scheme: Scheme | str) -> TaggedText:
    scheme = Scheme(scheme)
    if scheme is Scheme.C:
        raise ValueError("responses are tagged with scheme 'i' or 'r'")
    if not response or not response.strip():
        raise errors.EmptyResponse("response has no sentences")
    return _tag(response, scheme, 0)


@dataclass(frozen=True)
class ContextIndex:
    documents: tuple[Document, ...]
    tagged: tuple[TaggedText, ...]
    entries: tuple[tuple[int, SentenceSpan], ...]  # global id -> (doc ordinal, local span)

    def __len__(self) -> int:
        return len(self.entries)

    def doc_for(self, global_id: int) -> Document:
        return self.documents[self.entries[global_id][0]]

    def sentence(self, global_id: int) -> str:
        ordinal, span = self.entries[global_id]
        return span_text(self.documents[ordinal].text, span)


def tag_documents(docs: Sequence[Document]) -> ContextIndex:
    """Tag every document with ``<cI>`` ids numbered continuously across the list."""
    if not docs:
        raise errors.EmptyDocumentList("no documents to tag")
    tagged: list[TaggedText] = []
    entries: list[tuple[int, SentenceSpan]] = []
    next_id = 0
    for ordinal, doc in enumerate(docs):
        if not doc.text or not doc.text.strip():
            raise errors.EmptyDocumentText(doc.doc_id)
        tt = _tag(doc.text, Scheme.C, next_id)
        tagged.append(tt)
        entries.extend((ordinal, span) for span in tt.spans)
        next_id += len(tt)
    return ContextIndex(tuple(docs), tuple(tagged), tuple(entries))


def spans_for_ids(
    index: ContextIndex | TaggedText, ids: Sequence[int]
) -> list[tuple[int | None, SentenceSpan]]:
    """Resolve sentence ids to spans, in input order.

    Context ids yield ``(doc ordinal, span)``; response ids yield ``(None, span)``.
    """
    limit = len(index)
    out: list[tuple[int | None, SentenceSpan]] = []
    for raw_id in ids:
        if isinstance(raw_id, bool) or not isinstance(raw_id, int) or not 0 <= raw_id < limit:
            raise errors.IdOutOfRange(raw_id, limit)
        if isinstance(index, ContextIndex):
            out.append(index.entries[raw_id])
        else:
            out.append((None, index.spans[raw_id]))
    return out
