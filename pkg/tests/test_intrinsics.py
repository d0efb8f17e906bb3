import json

import pytest

from ragintrinsics import (
    AnswerabilityLabel,
    Conversation,
    Document,
    Intrinsics,
    InvocationRecord,
    RelevanceLabel,
    ScriptedBackend,
    Strategy,
    errors,
)
from ragintrinsics.intrinsics import result_to_wire
from ragintrinsics.prompts import BACKWARD_GENERATION_PROMPT, SYNONYMIC_REWRITE_PROMPT

ROLE = "<|start_of_role|>{}<|end_of_role|>"


def runner(*rules, strict=True, default=""):
    return Intrinsics(ScriptedBackend(list(rules), strict=strict, default=default))


IBM = Conversation.of(
    ("user", "I use IBM Cloud."),
    ("assistant", "How can I help?"),
    ("user", "I forgot my password, how do I reset it?"),
)


class TestRewrite:
    def test_contextual_rewrite(self):
        r = runner(("rewrite:", '{"rewritten_question": "How do I reset my IBM Cloud password?"}'))
        result = r.rewrite_query(IBM)
        assert result.rewritten == "How do I reset my IBM Cloud password?"
        assert not result.unchanged

    def test_echo_is_unchanged(self):
        r = runner(("rewrite:", '{"rewritten_question": "What is DNS?"}'))
        assert r.rewrite_query(Conversation.of(("user", "What is DNS?"))).unchanged

    def test_malformed_keeps_raw(self):
        with pytest.raises(errors.MalformedOutput) as info:
            runner(("rewrite:", "nonsense")).rewrite_query(IBM)
        assert info.value.raw == "nonsense"


class TestExpand:
    CONV = Conversation.of(("user", "reset password"))

    def full(self, rewrite="Reset an account password"):
        return runner(
            ("rewrite:", json.dumps({"rewritten_question": rewrite})),
            (SYNONYMIC_REWRITE_PROMPT.split("\n")[0], "recover login credentials"),
            (BACKWARD_GENERATION_PROMPT.split("\n")[0], "How can I reset my password?"),
            ("<|start_of_role|>user<|end_of_role|>reset password", "Open settings and click reset."),
        )

    def test_last_turn_only(self):
        result = runner().expand_query(self.CONV, ["last_turn"])
        assert result.queries == ["reset password"]

    def test_all_five(self):
        result = self.full().expand_query(self.CONV)
        assert [s for s, _ in result.variants] == list(Strategy)
        assert len(result.queries) == 5
        assert result.failures == ()

    def test_rewrite_duplicate_of_query_is_dropped(self):
        result = self.full(rewrite="Reset  Password").expand_query(self.CONV)
        assert len(result.queries) == 4
        assert Strategy.REWRITE not in dict(result.variants)

    def test_failures_recorded(self):
        result = runner().expand_query(self.CONV, ["rewrite", "synonymic"])
        assert result.queries == ["reset password"]
        assert {s for s, _ in result.failures} == {Strategy.REWRITE, Strategy.SYNONYMIC}

    def test_wire(self):
        wire = runner().expand_query(self.CONV, ["last_turn"]).to_wire()
        assert wire["queries"] == [{"role": "user", "content": "reset password", "strategy": "last_turn"}]


class TestRelevance:
    Q = Conversation.of(("user", "q"))

    def test_single(self):
        r = runner((ROLE.format("context_relevance"), '{"context_relevance": "irrelevant"}'))
        assert r.classify_relevance(self.Q, Document("d", "x")) is RelevanceLabel.IRRELEVANT

    def test_many_in_order(self):
        labels = ["relevant", "partially relevant", "irrelevant"]
        docs = [Document(f"d{k}", f"body {k}") for k in range(3)]
        rules = [(f"body {k}", json.dumps({"context_relevance": lab})) for k, lab in enumerate(labels)]
        got = runner(*rules).classify_relevance_many(self.Q, docs)
        assert [g.wire for g in got] == labels
        assert result_to_wire("CR", got, docs)[1] == {"doc_id": "d1", "context_relevance": "partially relevant"}

    def test_return_exceptions(self):
        docs = [Document("a", "good"), Document("b", "bad")]
        r = runner(("good", '{"context_relevance": "relevant"}'), ("bad", "??"))
        got = r.classify_relevance_many(self.Q, docs, return_exceptions=True)
        assert got[0] is RelevanceLabel.RELEVANT and isinstance(got[1], errors.MalformedOutput)
        with pytest.raises(errors.MalformedOutput):
            r.classify_relevance_many(self.Q, docs)

    def test_no_docs(self):
        with pytest.raises(errors.MissingDocuments):
            runner().classify_relevance_many(self.Q, [])


class TestAnswerability:
    @pytest.mark.parametrize("text, label", [("answerable", "answerable"), ("unanswerable", "unanswerable")])
    def test_labels(self, text, label):
        r = runner((ROLE.format("answerability"), text))
        assert r.determine_answerability(Conversation.of(("user", "q")), [Document("d", "x")]).value == label

    def test_no_docs(self):
        with pytest.raises(errors.MissingDocuments):
            runner().determine_answerability(Conversation.of(("user", "q")), [])


class TestCertainty:
    def test_post_answer(self, answered_conv):
        assert runner(("certainty", "75%")).score_certainty(answered_conv).percent == 75

    def test_pre_answer(self, user_conv):
        score = runner(("certainty", "25% likely")).score_certainty(user_conv, scenario="pre_answer")
        assert score.percent == 25

    def test_scenario_mismatch(self, user_conv):
        with pytest.raises(errors.TerminalRoleMismatch):
            runner(("certainty", "75%")).score_certainty(user_conv, scenario="post_answer")

    def test_sends_three_token_budget(self, answered_conv):
        backend = ScriptedBackend([("certainty", "85% I am confident in this")])
        assert Intrinsics(backend).score_certainty(answered_conv).raw == "85% I"


class TestHallucination:
    DOCS = [Document("d", "Doc.")]

    def run(self, answered_conv, labels):
        items = [{"i": k, "f": f, "r": "why"} for k, f in enumerate(labels)]
        return runner(("<i0> A. <i1> B.", json.dumps(items))).detect_hallucinations(answered_conv, self.DOCS)

    def test_na_not_flagged(self, answered_conv):
        report = self.run(answered_conv, ["faithful", "NA"])
        assert report.sentence_scores == (1.0, None)
        assert not report.response_flagged
        assert report.mean_faithfulness == 1.0

    def test_unfaithful_flagged(self, answered_conv):
        report = self.run(answered_conv, ["faithful", "unfaithful"])
        assert report.response_flagged
        assert [(s.start, s.end) for s in report.spans] == [(0, 2), (3, 5)]

    def test_missing_id(self, answered_conv):
        with pytest.raises(errors.MissingSentenceIds):
            runner(("<i0>", '[{"i":0,"f":"faithful","r":""}]')).detect_hallucinations(answered_conv, self.DOCS)


class TestCitations:
    CONV = Conversation.of(("user", "q"), ("assistant", "Only."))
    DOCS = [Document("doc1", "First."), Document("doc2", "Second.")]

    def test_resolves_to_document(self):
        report = runner(("<r0>", '[{"r":0,"c":[1]}]')).generate_citations(self.CONV, self.DOCS)
        assert report.passage_level == {0: frozenset({"doc2"})}
        wire = report.to_wire()
        assert wire["citations"][0]["context_spans"] == [{"c": 1, "doc_id": "doc2", "start": 0, "end": 7}]

    def test_empty_citation(self):
        report = runner(("<r0>", '[{"r":0,"c":[]}]')).generate_citations(self.CONV, self.DOCS)
        assert report.passage_level == {0: frozenset()}

    def test_out_of_range(self):
        with pytest.raises(errors.IdOutOfRange):
            runner(("<r0>", '[{"r":0,"c":[2]}]')).generate_citations(self.CONV, self.DOCS)


class TestInvoke:
    def test_from_dict_and_dispatch(self):
        record = InvocationRecord.from_dict(
            {"intrinsic": "ad", "conversation": [{"role": "user", "content": "q"}], "documents": [{"text": "x"}]}
        )
        result = runner((ROLE.format("answerability"), "answerable")).invoke(record)
        assert result is AnswerabilityLabel.ANSWERABLE
        assert result_to_wire("AD", result) == {"answerability": "answerable"}

    def test_missing_conversation(self):
        with pytest.raises(errors.InvalidInput):
            InvocationRecord.from_dict({"intrinsic": "QR"})

    def test_unknown(self):
        with pytest.raises(errors.UnknownIntrinsic):
            InvocationRecord.from_dict({"intrinsic": "ZZ", "conversation": []})

    def test_hd_requires_docs(self, answered_conv):
        record = InvocationRecord("HD", answered_conv)
        with pytest.raises(errors.MissingDocuments):
            runner().invoke(record)

    def test_seed_reaches_request(self, user_conv):
        backend = ScriptedBackend([("rewrite:", '{"rewritten_question": "x"}')])
        seen = []
        original = backend.generate
        backend.generate = lambda req: seen.append(req.params.seed) or original(req)
        Intrinsics(backend, seed=11).rewrite_query(user_conv)
        assert seen == [11]
