"""Turn a conversation (and optional documents) into the raw prompt string.

The markup is a small documented template (see :class:`PromptTemplate`).
Each intrinsic is triggered by what follows the serialized turns: a special
generation role (rewrite, context_relevance, answerability, certainty), or an
appended system instruction followed by the ordinary assistant role.
"""

from __future__ import annotations

import enum
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from importlib import resources
from typing import Any

from . import errors
from .core import Conversation, Document, EndsWith, Role, check_unique_ids, validate_conversation
from .segmenter import Scheme, tag_documents, tag_response


def _resource(name: str) -> str:
    return resources.files(__package__).joinpath("resources", name).read_text(encoding="utf-8")


REWRITE_ROLE = _resource("rewrite_role.txt")
HALLUCINATION_INSTRUCTION = _resource("hallucination_instruction.txt")
CITATION_INSTRUCTION = _resource("citation_instruction.txt")
RERANK_JUDGE_PROMPT = _resource("rerank_judge.txt")

CONTEXT_RELEVANCE_ROLE = "context_relevance"
ANSWERABILITY_ROLE = "answerability"
CERTAINTY_ROLE = "certainty"
ASSISTANT_ROLE = Role.ASSISTANT.value

# Library-local prompts (not model-specific; override freely).
RAG_SYSTEM_PROMPT = (
    "You are a helpful assistant. Answer the last user question using only the "
    "provided documents. If the documents do not contain the answer, say that you "
    "don't know the answer."
)
BACKWARD_GENERATION_PROMPT = (
    "Here is an answer:\n{answer}\n\nWrite the single question that this answer most "
    "plausibly responds to. Output only the question."
)
SYNONYMIC_REWRITE_PROMPT = (
    "Rewrite the following search query using synonyms and alternative phrasing while "
    "keeping its meaning. Output only the rewritten query.\n\nQuery: {query}"
)


class Trigger(str, enum.Enum):
    QR = "QR"
    CR = "CR"
    AD = "AD"
    UQ = "UQ"
    HD = "HD"
    CG = "CG"
    PRR = "PRR"
    GENERATE = "GENERATE"


_EXPECTED_END = {
    Trigger.QR: EndsWith.USER_QUERY,
    Trigger.CR: EndsWith.USER_QUERY,
    Trigger.AD: EndsWith.USER_QUERY,
    Trigger.PRR: EndsWith.USER_QUERY,
    Trigger.GENERATE: EndsWith.USER_QUERY,
    Trigger.UQ: EndsWith.EITHER,
    Trigger.HD: EndsWith.ASSISTANT_RESPONSE,
    Trigger.CG: EndsWith.ASSISTANT_RESPONSE,
}

_ROLE_SUFFIX = {
    Trigger.QR: REWRITE_ROLE,
    Trigger.CR: CONTEXT_RELEVANCE_ROLE,
    Trigger.AD: ANSWERABILITY_ROLE,
    Trigger.UQ: CERTAINTY_ROLE,
    Trigger.GENERATE: ASSISTANT_ROLE,
}


@dataclass(frozen=True)
class PromptTemplate:
    role_open: str = "<|start_of_role|>"
    role_close: str = "<|end_of_role|>"
    turn_end: str = "<|end_of_text|>"
    document_role: str = "documents"
    document_format: str = "[Document {doc_id}] {title}\n{text}"
    document_format_untitled: str = "[Document {doc_id}]\n{text}"
    document_separator: str = "\n\n"

    def __post_init__(self) -> None:
        if not self.role_open or not self.role_close or self.role_open == self.role_close:
            raise ValueError("role_open and role_close must be non-empty and distinct")

    def turn(self, role: str, content: str) -> str:
        return f"{self.role_open}{role}{self.role_close}{content}{self.turn_end}"

    def suffix(self, role: str) -> str:
        return f"{self.role_open}{role}{self.role_close}"

    def document(self, doc: Document, text: str | None = None) -> str:
        body = doc.text if text is None else text
        if doc.title:
            return self.document_format.format(doc_id=doc.doc_id, title=doc.title, text=body)
        return self.document_format_untitled.format(doc_id=doc.doc_id, text=body)


DEFAULT_TEMPLATE = PromptTemplate()


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    generation_role: str
    meta: Mapping[str, Any] = field(default_factory=dict)


def _serialize(
    turns: Sequence[tuple[str, str]],
    docs: Sequence[tuple[Document, str]] | None,
    generation_role: str,
    template: PromptTemplate,
) -> str:
    parts: list[str] = []
    rest = list(turns)
    if rest and rest[0][0] == Role.SYSTEM.value:
        parts.append(template.turn(*rest.pop(0)))
    if docs:
        block = template.document_separator.join(template.document(d, t) for d, t in docs)
        parts.append(template.turn(template.document_role, block))
    parts.extend(template.turn(role, content) for role, content in rest)
    parts.append(template.suffix(generation_role))
    return "".join(parts)


def _turn_pairs(conv: Conversation, system_prompt: str | None) -> list[tuple[str, str]]:
    pairs = [(t.role.value, t.content) for t in conv.turns]
    if system_prompt and conv.system is None:
        pairs.insert(0, (Role.SYSTEM.value, system_prompt))
    return pairs


def _require_docs(trigger: Trigger, docs: Sequence[Document] | None) -> Sequence[Document]:
    if not docs:
        raise errors.MissingDocuments(trigger.value)
    check_unique_ids(docs)
    return docs


def render(
    conv: Conversation,
    docs: Sequence[Document] | None = None,
    trigger: Trigger | str = Trigger.GENERATE,
    *,
    template: PromptTemplate = DEFAULT_TEMPLATE,
    system_prompt: str | None = None,
    judge_prompt: str | None = None,
) -> RenderedPrompt:
    """Render ``conv`` for ``trigger``.

    ``system_prompt`` is inserted as a leading system turn when the
    conversation has none. ``judge_prompt`` only applies to PRR, where
    ``docs`` must be exactly the two passages being compared.
    """
    trigger = Trigger(trigger)
    validate_conversation(conv, _EXPECTED_END[trigger], error=errors.TerminalRoleMismatch)
    if trigger is Trigger.HD:
        return render_hd(conv, docs, template=template, system_prompt=system_prompt)
    if trigger is Trigger.CG:
        return render_cg(conv, docs, template=template, system_prompt=system_prompt)
    if trigger is Trigger.PRR:
        docs = _require_docs(trigger, docs)
        if len(docs) != 2:
            raise errors.InvalidInput(f"PRR compares exactly 2 passages, got {len(docs)}")
        return render_pairwise(
            conv.last_user_query(), docs[0], docs[1], judge_prompt=judge_prompt, template=template
        )
    if trigger is Trigger.CR:
        docs = _require_docs(trigger, docs)
        if len(docs) != 1:
            raise errors.InvalidInput(f"CR judges one passage at a time, got {len(docs)}")
    elif trigger is Trigger.AD:
        docs = _require_docs(trigger, docs)
    elif docs:
        check_unique_ids(docs)

    role = _ROLE_SUFFIX[trigger]
    doc_pairs = [(d, d.text) for d in docs] if docs else None
    text = _serialize(_turn_pairs(conv, system_prompt), doc_pairs, role, template)
    return RenderedPrompt(text, role)


def render_hd(
    conv: Conversation,
    docs: Sequence[Document] | None,
    *,
    template: PromptTemplate = DEFAULT_TEMPLATE,
    system_prompt: str | None = None,
) -> RenderedPrompt:
    validate_conversation(conv, EndsWith.ASSISTANT_RESPONSE, error=errors.TerminalRoleMismatch)
    docs = _require_docs(Trigger.HD, docs)
    tagged = tag_response(conv.last.content, Scheme.I)
    pairs = _turn_pairs(conv.replace_last(tagged.rendered), system_prompt)
    pairs.append((Role.SYSTEM.value, HALLUCINATION_INSTRUCTION))
    text = _serialize(pairs, [(d, d.text) for d in docs], ASSISTANT_ROLE, template)
    return RenderedPrompt(
        text, ASSISTANT_ROLE, {"response": tagged, "n_response_sentences": len(tagged)}
    )


def render_cg(
    conv: Conversation,
    docs: Sequence[Document] | None,
    *,
    template: PromptTemplate = DEFAULT_TEMPLATE,
    system_prompt: str | None = None,
) -> RenderedPrompt:
    validate_conversation(conv, EndsWith.ASSISTANT_RESPONSE, error=errors.TerminalRoleMismatch)
    docs = _require_docs(Trigger.CG, docs)
    tagged = tag_response(conv.last.content, Scheme.R)
    context = tag_documents(docs)
    pairs = _turn_pairs(conv.replace_last(tagged.rendered), system_prompt)
    pairs.append((Role.SYSTEM.value, CITATION_INSTRUCTION))
    doc_pairs = [(d, t.rendered) for d, t in zip(docs, context.tagged)]
    text = _serialize(pairs, doc_pairs, ASSISTANT_ROLE, template)
    return RenderedPrompt(
        text,
        ASSISTANT_ROLE,
        {
            "response": tagged,
            "context": context,
            "n_response_sentences": len(tagged),
            "n_context_sentences": len(context),
        },
    )


def pairwise_content(query: str, a: Document, b: Document, judge_prompt: str | None = None) -> str:
    instructions = RERANK_JUDGE_PROMPT if judge_prompt is None else judge_prompt
    return f"{instructions}\n\nquery: {query}\n\npassage A: {a.text}\n\npassage B: {b.text}"


def render_pairwise(
    query: str,
    a: Document,
    b: Document,
    *,
    judge_prompt: str | None = None,
    template: PromptTemplate = DEFAULT_TEMPLATE,
) -> RenderedPrompt:
    content = pairwise_content(query, a, b, judge_prompt)
    text = _serialize([(Role.USER.value, content)], None, ASSISTANT_ROLE, template)
    return RenderedPrompt(text, ASSISTANT_ROLE, {"passage_a": a.doc_id, "passage_b": b.doc_id})
