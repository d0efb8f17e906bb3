"""Conversation and document types plus the intrinsic registry."""

from __future__ import annotations

import enum
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from typing import Any

from . import errors


class Role(str, enum.Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


class EndsWith(str, enum.Enum):
    USER_QUERY = "user_query"
    ASSISTANT_RESPONSE = "assistant_response"
    EITHER = "either"


class Passages(str, enum.Enum):
    NONE = "none"
    ONE = "one"
    MANY = "many"
    OPTIONAL = "optional"


class Stage(str, enum.Enum):
    PRE_RETRIEVAL = "pre_retrieval"
    PRE_GENERATION = "pre_generation"
    POST_GENERATION = "post_generation"
    PRE_OR_POST = "pre_or_post"


class IntrinsicName(str, enum.Enum):
    QR = "QR"
    QE = "QE"
    CR = "CR"
    AD = "AD"
    PRR = "PRR"
    UQ = "UQ"
    HD = "HD"
    CG = "CG"


@dataclass(frozen=True)
class Turn:
    role: Role
    content: str

    def __post_init__(self) -> None:
        try:
            role = Role(self.role)
        except ValueError:
            raise errors.InvalidTurn(f"unknown role {self.role!r}") from None
        object.__setattr__(self, "role", role)
        if not isinstance(self.content, str) or not self.content.strip():
            raise errors.InvalidTurn(f"{role.value} turn has empty content")

    def to_dict(self) -> dict[str, str]:
        return {"role": self.role.value, "content": self.content}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Turn:
        if not isinstance(data, Mapping) or "role" not in data or "content" not in data:
            raise errors.InvalidTurn("turn must be an object with 'role' and 'content'")
        return cls(role=data["role"], content=data["content"])


@dataclass(frozen=True)
class Conversation:
    """Ordered turns. Structural invariants are checked on construction."""

    turns: tuple[Turn, ...]

    def __post_init__(self) -> None:
        turns = tuple(self.turns)
        object.__setattr__(self, "turns", turns)
        if not turns:
            raise errors.EmptyConversation("conversation has no turns")
        for idx, turn in enumerate(turns):
            if turn.role is Role.SYSTEM and idx != 0:
                raise errors.MisplacedSystemTurn(idx)
        start = 1 if turns[0].role is Role.SYSTEM else 0
        for idx in range(start + 1, len(turns)):
            if turns[idx].role is turns[idx - 1].role:
                raise errors.ConsecutiveSameRole(idx, turns[idx].role.value)
        if start == 1 and len(turns) == 1:
            raise errors.EmptyConversation("conversation holds only a system turn")

    @classmethod
    def of(cls, *pairs: tuple[str, str]) -> Conversation:
        """Shorthand: ``Conversation.of(("user", "hi"), ("assistant", "hello"))``."""
        return cls(tuple(Turn(Role(r), c) for r, c in pairs))

    @property
    def last(self) -> Turn:
        return self.turns[-1]

    @property
    def system(self) -> Turn | None:
        return self.turns[0] if self.turns[0].role is Role.SYSTEM else None

    def last_user_query(self) -> str:
        for turn in reversed(self.turns):
            if turn.role is Role.USER:
                return turn.content
        raise errors.InvalidInput("conversation has no user turn")

    def replace_last(self, content: str) -> Conversation:
        return Conversation(self.turns[:-1] + (Turn(self.last.role, content),))

    def append(self, role: Role | str, content: str) -> Conversation:
        return Conversation(self.turns + (Turn(Role(role), content),))

    def without_last(self) -> Conversation:
        return Conversation(self.turns[:-1])

    def to_list(self) -> list[dict[str, str]]:
        return [t.to_dict() for t in self.turns]

    @classmethod
    def from_list(cls, items: Iterable[Mapping[str, Any]]) -> Conversation:
        if isinstance(items, (str, bytes)) or not isinstance(items, Iterable):
            raise errors.InvalidTurn("conversation must be a list of turns")
        return cls(tuple(Turn.from_dict(t) for t in items))


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    title: str | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.doc_id, str) or not self.doc_id:
            raise errors.InvalidDocument("doc_id must be a non-empty string")
        if not isinstance(self.text, str) or not self.text.strip():
            raise errors.InvalidDocument(f"document {self.doc_id!r} has empty text")
        if self.title is not None and not isinstance(self.title, str):
            raise errors.InvalidDocument(f"document {self.doc_id!r} title must be a string")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"doc_id": self.doc_id}
        if self.title is not None:
            out["title"] = self.title
        out["text"] = self.text
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], index: int = 0) -> Document:
        if not isinstance(data, Mapping) or "text" not in data:
            raise errors.InvalidDocument("document must be an object with a 'text' field")
        doc_id = data.get("doc_id")
        if doc_id is None:
            doc_id = f"doc_{index}"
        return cls(doc_id=str(doc_id), text=data["text"], title=data.get("title"))


def documents_from_list(items: Iterable[Mapping[str, Any]]) -> tuple[Document, ...]:
    docs = tuple(Document.from_dict(d, i) for i, d in enumerate(items))
    check_unique_ids(docs)
    return docs


def check_unique_ids(docs: Sequence[Document]) -> None:
    seen: set[str] = set()
    for doc in docs:
        if doc.doc_id in seen:
            raise errors.InvalidDocument(f"duplicate doc_id {doc.doc_id!r}")
        seen.add(doc.doc_id)


@dataclass(frozen=True)
class IntrinsicSignature:
    name: IntrinsicName
    needs_passages: Passages
    ends_with: EndsWith
    stage: Stage


REGISTRY: Mapping[IntrinsicName, IntrinsicSignature] = {
    sig.name: sig
    for sig in (
        IntrinsicSignature(IntrinsicName.QR, Passages.NONE, EndsWith.USER_QUERY, Stage.PRE_RETRIEVAL),
        IntrinsicSignature(IntrinsicName.QE, Passages.NONE, EndsWith.USER_QUERY, Stage.PRE_RETRIEVAL),
        IntrinsicSignature(IntrinsicName.CR, Passages.ONE, EndsWith.USER_QUERY, Stage.PRE_GENERATION),
        IntrinsicSignature(IntrinsicName.AD, Passages.MANY, EndsWith.USER_QUERY, Stage.PRE_GENERATION),
        IntrinsicSignature(IntrinsicName.PRR, Passages.MANY, EndsWith.USER_QUERY, Stage.PRE_GENERATION),
        IntrinsicSignature(IntrinsicName.UQ, Passages.OPTIONAL, EndsWith.EITHER, Stage.PRE_OR_POST),
        IntrinsicSignature(IntrinsicName.HD, Passages.MANY, EndsWith.ASSISTANT_RESPONSE, Stage.POST_GENERATION),
        IntrinsicSignature(IntrinsicName.CG, Passages.MANY, EndsWith.ASSISTANT_RESPONSE, Stage.POST_GENERATION),
    )
}


def registry_lookup(name: IntrinsicName | str) -> IntrinsicSignature:
    try:
        key = IntrinsicName(name.upper() if isinstance(name, str) else name)
    except (ValueError, AttributeError):
        raise errors.UnknownIntrinsic(name) from None
    return REGISTRY[key]


def validate_conversation(
    conv: Conversation,
    expected_end: EndsWith | str,
    *,
    error: type[errors.WrongTerminalRole] = errors.WrongTerminalRole,
) -> Conversation:
    """Check ``conv`` against its invariants and the expected final role.

    Returns ``conv`` itself so the call can be chained.
    """
    if not isinstance(conv, Conversation):
        conv = Conversation(tuple(conv))  # re-runs structural checks
    expected = EndsWith(expected_end)
    if not conv.turns:
        raise errors.EmptyConversation("conversation has no turns")
    actual = conv.last.role
    if expected is EndsWith.USER_QUERY and actual is not Role.USER:
        raise error(Role.USER.value, actual.value)
    if expected is EndsWith.ASSISTANT_RESPONSE and actual is not Role.ASSISTANT:
        raise error(Role.ASSISTANT.value, actual.value)
    if expected is EndsWith.EITHER and actual not in (Role.USER, Role.ASSISTANT):
        raise error("user or assistant", actual.value)
    return conv
