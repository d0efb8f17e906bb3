"""The eight intrinsics as methods on :class:`Intrinsics`.

Each method renders a prompt, calls the backend and parses the completion.
Parse errors propagate with the raw completion attached (``exc.raw``).
"""

from __future__ import annotations

import enum
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from typing import Any

from . import errors, parsing, prompts, rerank as _rerank
from .backend import Backend, CompletionRequest, GenerationParams
from .core import (
    Conversation,
    Document,
    EndsWith,
    IntrinsicName,
    Role,
    documents_from_list,
    registry_lookup,
    validate_conversation,
)
from .parsing import (
    AnswerabilityLabel,
    CertaintyScore,
    CitationLink,
    Faithfulness,
    RelevanceLabel,
    RewriteResult,
    SentenceVerdict,
)
from .prompts import DEFAULT_TEMPLATE, PromptTemplate, RenderedPrompt, Trigger
from .rerank import RankedPassages
from .segmenter import ContextIndex, SentenceSpan, TaggedText, spans_for_ids

FLAG_THRESHOLD = 0.1

# Per-sentence faithfulness score for each label; NA sentences carry no claim and are skipped.
LABEL_SCORES: Mapping[Faithfulness, float | None] = {
    Faithfulness.FAITHFUL: 1.0,
    Faithfulness.PARTIAL: 0.5,
    Faithfulness.UNFAITHFUL: 0.0,
    Faithfulness.NA: None,
}

DEFAULT_PARAMS: Mapping[str, GenerationParams] = {
    "QR": GenerationParams(max_tokens=256),
    "CR": GenerationParams(max_tokens=32),
    "AD": GenerationParams(max_tokens=8),
    "UQ": GenerationParams(max_tokens=3),
    "HD": GenerationParams(max_tokens=2048),
    "CG": GenerationParams(max_tokens=1024),
    "PRR": GenerationParams(max_tokens=16),
    "GENERATE": GenerationParams(max_tokens=512),
    "QE_ANSWER": GenerationParams(max_tokens=256, temperature=0.7, n_samples=1),
    "QE_BACKWARD": GenerationParams(max_tokens=64),
    "QE_SYNONYM": GenerationParams(max_tokens=64),
}


class Scenario(str, enum.Enum):
    POST_ANSWER = "post_answer"
    PRE_ANSWER = "pre_answer"


class Strategy(str, enum.Enum):
    LAST_TURN = "last_turn"
    REWRITE = "rewrite"
    ANSWER_SAMPLING = "answer_sampling"
    BACKWARD_GENERATION = "backward_generation"
    SYNONYMIC = "synonymic"


ALL_STRATEGIES = frozenset(Strategy)


def hallucination_flag(scores: Iterable[float | None]) -> bool:
    return any(s is not None and s < FLAG_THRESHOLD for s in scores)


@dataclass(frozen=True)
class HallucinationReport:
    verdicts: tuple[SentenceVerdict, ...]
    spans: tuple[SentenceSpan, ...]
    sentence_scores: tuple[float | None, ...]
    response_flagged: bool
    response: TaggedText

    @property
    def mean_faithfulness(self) -> float | None:
        scored = [s for s in self.sentence_scores if s is not None]
        return sum(scored) / len(scored) if scored else None

    def to_wire(self) -> dict[str, Any]:
        return {
            "verdicts": [
                {**v.to_wire(), "start": sp.start, "end": sp.end, "score": score}
                for v, sp, score in zip(self.verdicts, self.spans, self.sentence_scores)
            ],
            "flagged": self.response_flagged,
        }


@dataclass(frozen=True)
class CitationReport:
    links: tuple[CitationLink, ...]
    response_spans: tuple[SentenceSpan, ...]
    context_spans: tuple[tuple[tuple[int, SentenceSpan], ...], ...]
    passage_level: Mapping[int, frozenset[str]]
    response: TaggedText
    context: ContextIndex

    def to_wire(self) -> dict[str, Any]:
        docs = self.context.documents
        return {
            "citations": [
                {
                    **link.to_wire(),
                    "response_span": [rsp.start, rsp.end],
                    "context_spans": [
                        {"c": cid, "doc_id": docs[ordinal].doc_id, "start": sp.start, "end": sp.end}
                        for cid, (ordinal, sp) in zip(link.c, cspans)
                    ],
                }
                for link, rsp, cspans in zip(self.links, self.response_spans, self.context_spans)
            ],
            "passage_level": {str(r): sorted(ids) for r, ids in sorted(self.passage_level.items())},
        }


@dataclass(frozen=True)
class ExpandedQueries:
    variants: tuple[tuple[Strategy, str], ...]
    failures: tuple[tuple[Strategy, str], ...] = ()

    @property
    def queries(self) -> list[str]:
        return [q for _, q in self.variants]

    def to_wire(self) -> dict[str, Any]:
        return {
            "queries": [
                {"role": Role.USER.value, "content": q, "strategy": s.value} for s, q in self.variants
            ],
            "failures": [{"strategy": s.value, "error": msg} for s, msg in self.failures],
        }


def _norm(text: str) -> str:
    return " ".join(text.casefold().split())


class Intrinsics:
    """Stateless intrinsic runner bound to a backend."""

    def __init__(
        self,
        backend: Backend,
        *,
        template: PromptTemplate = DEFAULT_TEMPLATE,
        params: Mapping[str, GenerationParams] | None = None,
        system_prompt: str | None = None,
        seed: int | None = None,
    ) -> None:
        self.backend = backend
        self.template = template
        self.system_prompt = system_prompt
        merged = dict(DEFAULT_PARAMS)
        merged.update(params or {})
        if seed is not None:
            merged = {k: replace(v, seed=seed) for k, v in merged.items()}
        self.params = merged

    # -- plumbing ------------------------------------------------------------

    def _request(self, key: str, prompt: RenderedPrompt | str, intrinsic: str | None = None) -> CompletionRequest:
        text = prompt.text if isinstance(prompt, RenderedPrompt) else prompt
        return CompletionRequest(text, self.params[key], tag=key, intrinsic=intrinsic or key)

    def _complete(self, key: str, prompt: RenderedPrompt | str, intrinsic: str | None = None) -> str:
        return self.backend.generate(self._request(key, prompt, intrinsic)).unwrap()

    @staticmethod
    def _parse(fn, text: str, *args: Any) -> Any:
        try:
            return fn(text, *args)
        except errors.ParseError as exc:
            if exc.raw is None:
                exc.raw = text
            raise

    def _render(self, conv: Conversation, docs: Sequence[Document] | None, trigger: Trigger) -> RenderedPrompt:
        return prompts.render(
            conv, docs, trigger, template=self.template, system_prompt=self.system_prompt
        )

    # -- pre-retrieval -------------------------------------------------------

    def rewrite_query(self, conv: Conversation) -> RewriteResult:
        prompt = self._render(conv, None, Trigger.QR)
        text = self._complete("QR", prompt)
        return self._parse(parsing.parse_rewrite, text, conv.last.content)

    def expand_query(
        self, conv: Conversation, strategies: Iterable[Strategy | str] | None = None
    ) -> ExpandedQueries:
        """Fan the last user query out into several retrieval queries.

        ``last_turn`` is always included. Failing strategies are recorded in
        ``failures`` and skipped. Variants are deduplicated case- and
        whitespace-insensitively, keeping the first in strategy order.
        """
        validate_conversation(conv, EndsWith.USER_QUERY, error=errors.TerminalRoleMismatch)
        wanted = {Strategy(s) for s in (ALL_STRATEGIES if strategies is None else strategies)}
        query = conv.last.content
        found: dict[Strategy, str] = {Strategy.LAST_TURN: query}
        failures: list[tuple[Strategy, str]] = []

        stage1: list[tuple[Strategy, CompletionRequest]] = []
        if Strategy.REWRITE in wanted:
            stage1.append((Strategy.REWRITE, self._request("QR", self._render(conv, None, Trigger.QR))))
        if wanted & {Strategy.ANSWER_SAMPLING, Strategy.BACKWARD_GENERATION}:
            sample = prompts.render(conv, None, Trigger.GENERATE, template=self.template)
            stage1.append((Strategy.ANSWER_SAMPLING, self._request("QE_ANSWER", sample, "QE")))
        if Strategy.SYNONYMIC in wanted:
            content = prompts.SYNONYMIC_REWRITE_PROMPT.format(query=query)
            syn = prompts.render(Conversation.of(("user", content)), None, Trigger.GENERATE, template=self.template)
            stage1.append((Strategy.SYNONYMIC, self._request("QE_SYNONYM", syn, "QE")))

        answer: str | None = None
        if stage1:
            responses = self.backend.generate_batch([req for _, req in stage1])
            for (strategy, _), resp in zip(stage1, responses):
                try:
                    text = resp.unwrap()
                    if strategy is Strategy.REWRITE:
                        value = self._parse(parsing.parse_rewrite, text, query).rewritten
                    else:
                        value = text.strip()
                    if not value:
                        raise errors.MalformedOutput("empty completion", text)
                except (errors.ParseError, errors.BackendError) as exc:
                    failures.append((strategy, str(exc)))
                    continue
                if strategy is Strategy.ANSWER_SAMPLING:
                    answer = value
                    if Strategy.ANSWER_SAMPLING not in wanted:
                        continue
                found[strategy] = value

        if Strategy.BACKWARD_GENERATION in wanted:
            if answer is None:
                failures.append((Strategy.BACKWARD_GENERATION, "no sampled answer to work back from"))
            else:
                content = prompts.BACKWARD_GENERATION_PROMPT.format(answer=answer)
                back = prompts.render(
                    Conversation.of(("user", content)), None, Trigger.GENERATE, template=self.template
                )
                try:
                    value = self._complete("QE_BACKWARD", back, "QE").strip()
                    if not value:
                        raise errors.MalformedOutput("empty completion")
                    found[Strategy.BACKWARD_GENERATION] = value
                except (errors.ParseError, errors.BackendError) as exc:
                    failures.append((Strategy.BACKWARD_GENERATION, str(exc)))

        variants: list[tuple[Strategy, str]] = []
        seen: set[str] = set()
        for strategy in Strategy:
            if strategy in found and _norm(found[strategy]) not in seen:
                seen.add(_norm(found[strategy]))
                variants.append((strategy, found[strategy]))
        if not variants:
            raise errors.ExpansionFailed("no query variant could be produced")
        return ExpandedQueries(tuple(variants), tuple(failures))

    # -- pre-generation ------------------------------------------------------

    def classify_relevance(self, conv: Conversation, doc: Document) -> RelevanceLabel:
        prompt = self._render(conv, [doc], Trigger.CR)
        return self._parse(parsing.parse_relevance, self._complete("CR", prompt))

    def classify_relevance_many(
        self, conv: Conversation, docs: Sequence[Document], *, return_exceptions: bool = False
    ) -> list[RelevanceLabel | Exception]:
        """One CR judgement per document, batched, in input order.

        With ``return_exceptions`` a failing document yields its exception in
        place; otherwise the first failure is raised.
        """
        if not docs:
            raise errors.MissingDocuments("CR")
        reqs = [self._request("CR", self._render(conv, [d], Trigger.CR)) for d in docs]
        out: list[RelevanceLabel | Exception] = []
        for resp in self.backend.generate_batch(reqs):
            try:
                out.append(self._parse(parsing.parse_relevance, resp.unwrap()))
            except errors.IntrinsicsError as exc:
                if not return_exceptions:
                    raise
                out.append(exc)
        return out

    def determine_answerability(self, conv: Conversation, docs: Sequence[Document]) -> AnswerabilityLabel:
        prompt = self._render(conv, docs, Trigger.AD)
        return self._parse(parsing.parse_answerability, self._complete("AD", prompt))

    def rerank(
        self,
        conv_or_query: Conversation | str,
        passages: Sequence[Document],
        judge_prompt: str | None = None,
    ) -> RankedPassages:
        if isinstance(conv_or_query, Conversation):
            validate_conversation(conv_or_query, EndsWith.USER_QUERY, error=errors.TerminalRoleMismatch)
            query = conv_or_query.last.content
        else:
            query = conv_or_query
        if not passages:
            raise errors.MissingDocuments("PRR")

        def judge(pairs: Sequence[tuple[int, int]]) -> list[str | None]:
            reqs = [
                self._request(
                    "PRR",
                    prompts.render_pairwise(
                        query, passages[a], passages[b], judge_prompt=judge_prompt, template=self.template
                    ),
                )
                for a, b in pairs
            ]
            verdicts: list[str | None] = []
            for resp in self.backend.generate_batch(reqs):
                try:
                    verdicts.append(parsing.parse_preference(resp.unwrap()).value)
                except errors.ParseError:
                    verdicts.append(None)
            return verdicts

        return _rerank.rank(passages, judge)

    def score_certainty(
        self,
        conv: Conversation,
        docs: Sequence[Document] | None = None,
        scenario: Scenario | str = Scenario.POST_ANSWER,
    ) -> CertaintyScore:
        scenario = Scenario(scenario)
        expected = EndsWith.ASSISTANT_RESPONSE if scenario is Scenario.POST_ANSWER else EndsWith.USER_QUERY
        validate_conversation(conv, expected, error=errors.TerminalRoleMismatch)
        prompt = self._render(conv, docs, Trigger.UQ)
        return self._parse(parsing.parse_certainty, self._complete("UQ", prompt))

    # -- generation / post-generation ----------------------------------------

    def generate_response(self, conv: Conversation, docs: Sequence[Document] | None = None) -> str:
        prompt = prompts.render(
            conv,
            docs,
            Trigger.GENERATE,
            template=self.template,
            system_prompt=self.system_prompt or prompts.RAG_SYSTEM_PROMPT,
        )
        return self._complete("GENERATE", prompt).strip()

    def detect_hallucinations(self, conv: Conversation, docs: Sequence[Document]) -> HallucinationReport:
        prompt = self._render(conv, docs, Trigger.HD)
        tagged: TaggedText = prompt.meta["response"]
        text = self._complete("HD", prompt)
        verdicts = self._parse(parsing.parse_hallucination, text, len(tagged))
        scores = tuple(LABEL_SCORES[v.f] for v in verdicts)
        return HallucinationReport(
            tuple(verdicts),
            tuple(tagged.spans[v.i] for v in verdicts),
            scores,
            hallucination_flag(scores),
            tagged,
        )

    def generate_citations(self, conv: Conversation, docs: Sequence[Document]) -> CitationReport:
        prompt = self._render(conv, docs, Trigger.CG)
        tagged: TaggedText = prompt.meta["response"]
        context: ContextIndex = prompt.meta["context"]
        text = self._complete("CG", prompt)
        links = self._parse(parsing.parse_citations, text, len(tagged), len(context))
        response_spans = tuple(span for _, span in spans_for_ids(tagged, [link.r for link in links]))
        context_spans = tuple(tuple(spans_for_ids(context, list(link.c))) for link in links)
        passage_level = {
            link.r: frozenset(context.documents[ordinal].doc_id for ordinal, _ in cspans)
            for link, cspans in zip(links, context_spans)
        }
        return CitationReport(tuple(links), response_spans, context_spans, passage_level, tagged, context)

    # -- uniform invocation --------------------------------------------------

    def invoke(self, record: InvocationRecord) -> Any:
        sig = registry_lookup(record.intrinsic)
        name = sig.name
        conv, docs, opts = record.conversation, list(record.documents), dict(record.params)
        if name is IntrinsicName.QR:
            return self.rewrite_query(conv)
        if name is IntrinsicName.QE:
            return self.expand_query(conv, opts.get("strategies"))
        if name is IntrinsicName.CR:
            if not docs:
                raise errors.MissingDocuments(name.value)
            return self.classify_relevance_many(conv, docs)
        if name is IntrinsicName.AD:
            return self.determine_answerability(conv, docs)
        if name is IntrinsicName.PRR:
            return self.rerank(conv, docs, opts.get("judge_prompt"))
        if name is IntrinsicName.UQ:
            default = Scenario.POST_ANSWER if conv.last.role is Role.ASSISTANT else Scenario.PRE_ANSWER
            return self.score_certainty(conv, docs or None, opts.get("scenario", default))
        if name is IntrinsicName.HD:
            return self.detect_hallucinations(conv, docs)
        if name is IntrinsicName.CG:
            return self.generate_citations(conv, docs)
        raise errors.UnknownIntrinsic(sig.name)  # pragma: no cover


@dataclass(frozen=True)
class InvocationRecord:
    intrinsic: IntrinsicName
    conversation: Conversation
    documents: tuple[Document, ...] = ()
    params: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> InvocationRecord:
        if not isinstance(data, Mapping):
            raise errors.InvalidInput("invocation record must be a JSON object")
        name = registry_lookup(data.get("intrinsic", "")).name
        turns = data.get("conversation", data.get("turns"))
        if isinstance(turns, Mapping):
            turns = turns.get("turns")
        if turns is None:
            raise errors.InvalidInput("invocation record needs a 'conversation'")
        params = data.get("params") or {}
        if not isinstance(params, Mapping):
            raise errors.InvalidInput("'params' must be an object")
        return cls(
            name,
            Conversation.from_list(turns),
            documents_from_list(data.get("documents") or []),
            dict(params),
        )


def result_to_wire(name: IntrinsicName | str, result: Any, docs: Sequence[Document] = ()) -> Any:
    """Serialize an intrinsic result to its documented JSON shape."""
    name = IntrinsicName(name)
    if name is IntrinsicName.CR:
        labels = result if isinstance(result, list) else [result]
        return [
            {"doc_id": d.doc_id, "context_relevance": label.wire} for d, label in zip(docs, labels)
        ]
    if name is IntrinsicName.AD:
        return {"answerability": result.value}
    return result.to_wire()
