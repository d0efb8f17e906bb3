from __future__ import annotations

import re
from importlib import resources
from pathlib import Path

import pytest

from ragintrinsics import Conversation, Document, ScriptedBackend


@pytest.fixture
def demo_dir() -> Path:
    return Path(str(resources.files("ragintrinsics").joinpath("data", "demo")))


@pytest.fixture
def two_docs() -> list[Document]:
    return [
        Document("doc_a", "Paris is the capital of France.", title="France"),
        Document("doc_b", "Berlin is the capital of Germany."),
    ]


@pytest.fixture
def user_conv() -> Conversation:
    return Conversation.of(("user", "What is the capital of France?"))


@pytest.fixture
def answered_conv() -> Conversation:
    return Conversation.of(("user", "What is the capital of France?"), ("assistant", "A. B."))


def _below(value: int, width: int) -> str:
    """Regex for the zero-padded ``width``-digit numbers smaller than ``value``."""
    digits = f"{value:0{width}d}"
    parts = []
    for pos, d in enumerate(digits):
        if d != "0":
            parts.append(digits[:pos] + f"[0-{int(d) - 1}]" + r"\d" * (width - pos - 1))
    return "|".join(parts)


def strength_text(strength: int) -> str:
    return f"passage s{strength:03d}"


def strength_judge(strengths) -> ScriptedBackend:
    """Scripted pairwise judge over passages whose text is ``strength_text(s)``.

    One rule per passage: when it is passage A and B's number is smaller, A
    wins. Everything else falls through to "B". Patterns depend only on the
    strength value, so the regex cache makes repeated judges cheap.
    """
    backend = ScriptedBackend(strict=False, default="B")
    for s in dict.fromkeys(strengths):
        if s:
            pattern = (
                re.escape(f"passage A: {strength_text(s)}\n\npassage B: passage s")
                + f"(?:{_below(s, 3)})"
                + re.escape("<|end_of_text|>")
            )
            backend.add(pattern, "A", "regex")
    return backend


# Filled by test_acceptance.py; printed once at the end of the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
