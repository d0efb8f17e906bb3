"""Offline evaluation metrics and report assembly."""

from __future__ import annotations

import math
import re
from collections.abc import Hashable, Iterable, Mapping, Sequence
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Protocol

from .errors import MetricError
from .intrinsics import LABEL_SCORES, HallucinationReport, Intrinsics, hallucination_flag
from .parsing import CERTAINTY_LEVELS, AnswerabilityLabel, CertaintyScore, parse_answerability
from .pipeline import REFUSAL

# Lowercased, trimmed responses containing any of these count as abstentions.
REFUSAL_PATTERNS = ("i don't know", "i do not know", "cannot answer")
_APOSTROPHES = re.compile(r"[‘’ʼ`]")


def _paired(a: Sequence, b: Sequence, what: str) -> None:
    if len(a) != len(b):
        raise MetricError(f"{what}: length mismatch {len(a)} vs {len(b)}")
    if not a:
        raise MetricError(f"{what}: empty input")


# -- retrieval ---------------------------------------------------------------


def recall_at_k(retrieved_ids: Sequence[Hashable], gold_ids: Iterable[Hashable], k: int) -> float:
    gold = set(gold_ids)
    if not gold:
        raise MetricError("recall@k is undefined for an empty gold set")
    return len(set(retrieved_ids[:k]) & gold) / len(gold)


def ndcg_at_k(ranked_ids: Sequence[Hashable], gains: Mapping[Hashable, float], k: int) -> float:
    dcg = sum(gains.get(doc, 0.0) / math.log2(rank + 2) for rank, doc in enumerate(ranked_ids[:k]))
    ideal = sorted((g for g in gains.values() if g > 0), reverse=True)[:k]
    idcg = sum(g / math.log2(rank + 2) for rank, g in enumerate(ideal))
    return dcg / idcg if idcg > 0 else 0.0


# -- classification ----------------------------------------------------------


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class ClassificationReport:
    per_class: Mapping[str, ClassMetrics]
    weighted_f1: float
    confusion: Mapping[tuple[str, str], int]  # (gold, predicted) -> count

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_class": {
                label: {"precision": m.precision, "recall": m.recall, "f1": m.f1, "support": m.support}
                for label, m in self.per_class.items()
            },
            "weighted_f1": self.weighted_f1,
            "confusion": {f"{g}->{p}": n for (g, p), n in sorted(self.confusion.items())},
        }


def _label(value: Any) -> str:
    return str(getattr(value, "value", value))


def classification_report(
    preds: Sequence[Any], golds: Sequence[Any], labels: Sequence[Any] | None = None
) -> ClassificationReport:
    """Per-class P/R/F1 plus support-weighted F1.

    A class with no predictions has precision 0; with no gold items recall 0.
    """
    _paired(preds, golds, "classification_report")
    p = [_label(x) for x in preds]
    g = [_label(x) for x in golds]
    classes = [_label(x) for x in labels] if labels is not None else sorted(set(p) | set(g))
    confusion: dict[tuple[str, str], int] = {}
    for gi, pi in zip(g, p):
        confusion[(gi, pi)] = confusion.get((gi, pi), 0) + 1
    # Rational arithmetic so each figure is the correctly rounded exact value.
    per_class = {}
    weighted = Fraction(0)
    total = 0
    for c in classes:
        tp = confusion.get((c, c), 0)
        predicted = sum(1 for x in p if x == c)
        support = sum(1 for x in g if x == c)
        precision = Fraction(tp, predicted) if predicted else Fraction(0)
        recall = Fraction(tp, support) if support else Fraction(0)
        f1 = Fraction(2 * tp, predicted + support) if tp else Fraction(0)
        per_class[c] = ClassMetrics(float(precision), float(recall), float(f1), support)
        weighted += f1 * support
        total += support
    weighted = float(weighted / total) if total else 0.0
    return ClassificationReport(per_class, weighted, confusion)


# -- abstention / JAFS -------------------------------------------------------


def idk_judge(response: str) -> bool:
    text = _APOSTROPHES.sub("'", response).strip().lower()
    if text == REFUSAL.lower():
        return True
    return any(pattern in text for pattern in REFUSAL_PATTERNS)


def jafs(abstained: bool, truth: AnswerabilityLabel | str, faithfulness: float | None = None) -> float:
    """Full credit for abstaining on unanswerable, faithfulness for answering answerable, else 0."""
    truth = AnswerabilityLabel(truth)
    if abstained:
        return 1.0 if truth is AnswerabilityLabel.UNANSWERABLE else 0.0
    if truth is AnswerabilityLabel.ANSWERABLE:
        if faithfulness is None or not 0.0 <= faithfulness <= 1.0:
            raise MetricError(f"faithfulness must be in [0, 1], got {faithfulness!r}")
        return float(faithfulness)
    return 0.0


@dataclass(frozen=True)
class JafsReport:
    scores: tuple[float, ...]
    mean: float


def jafs_report(items: Iterable[tuple[bool, AnswerabilityLabel | str, float | None]]) -> JafsReport:
    scores = tuple(jafs(a, t, f) for a, t, f in items)
    if not scores:
        raise MetricError("jafs: empty input")
    return JafsReport(scores, math.fsum(scores) / len(scores))


class FaithfulnessJudge(Protocol):
    def __call__(self, conversation: Any, documents: Any) -> float: ...


class HDFaithfulness:
    """Faithfulness = mean HD sentence score; responses with only NA sentences score 1."""

    def __init__(self, intrinsics: Intrinsics) -> None:
        self.intrinsics = intrinsics

    def __call__(self, conversation, documents) -> float:
        mean = self.intrinsics.detect_hallucinations(conversation, documents).mean_faithfulness
        return 1.0 if mean is None else mean


class BackendFaithfulness:
    """Asks a model for a 0-100 faithfulness rating and rescales it to [0, 1]."""

    PROMPT = (
        "Rate from 0 to 100 how faithful the final assistant response is to the "
        "documents. Output only the number."
    )

    def __init__(self, intrinsics: Intrinsics) -> None:
        self.intrinsics = intrinsics

    def __call__(self, conversation, documents) -> float:
        asked = conversation.append("user", self.PROMPT)
        text = self.intrinsics.generate_response(asked, documents)
        match = re.search(r"\d+(?:\.\d+)?", text)
        if match is None:
            raise MetricError(f"faithfulness judge gave no number: {text!r}")
        return min(max(float(match.group()) / 100.0, 0.0), 1.0)


# -- calibration -------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationBin:
    level: int
    count: int
    mean_confidence: float
    accuracy: float


@dataclass(frozen=True)
class CalibrationReport:
    ece: float
    bins: tuple[CalibrationBin, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "ece": self.ece,
            "bins": [
                {"level": b.level, "count": b.count, "mean_confidence": b.mean_confidence, "accuracy": b.accuracy}
                for b in self.bins
            ],
        }


def _percent(score: CertaintyScore | int) -> int:
    value = score.percent if isinstance(score, CertaintyScore) else int(score)
    if value not in CERTAINTY_LEVELS:
        raise MetricError(f"{value} is not a quantized certainty level")
    return value


def ece(scores: Sequence[CertaintyScore | int], correct: Sequence[bool]) -> CalibrationReport:
    _paired(scores, correct, "ece")
    n = len(scores)
    buckets: dict[int, list[bool]] = {level: [] for level in CERTAINTY_LEVELS}
    for s, ok in zip(scores, correct):
        buckets[_percent(s)].append(bool(ok))
    bins = []
    total = 0.0
    for level in CERTAINTY_LEVELS:
        hits = buckets[level]
        conf = level / 100.0
        acc = sum(hits) / len(hits) if hits else 0.0
        bins.append(CalibrationBin(level, len(hits), conf if hits else 0.0, acc))
        if hits:
            total += len(hits) / n * abs(acc - conf)
    return CalibrationReport(total, tuple(bins))


def certainty_decile(score: CertaintyScore | int) -> int:
    """5% -> 0, 15% -> 1, ..., 95% -> 9."""
    return (_percent(score) - 5) // 10


def mae_certainty(preds: Sequence[CertaintyScore | int], targets: Sequence[CertaintyScore | int]) -> float:
    _paired(preds, targets, "mae_certainty")
    return sum(abs(certainty_decile(p) - certainty_decile(t)) for p, t in zip(preds, targets)) / len(preds)


# -- citations / hallucination -----------------------------------------------


def citation_pairs(report, level: str = "passage") -> dict[int, set]:
    """Predicted targets per response sentence: doc_ids (passage) or context ids (sentence)."""
    if isinstance(report, Mapping):
        return {int(r): set(v) for r, v in report.items()}
    if level == "passage":
        return {r: set(ids) for r, ids in report.passage_level.items()}
    return {link.r: set(link.c) for link in report.links}


def citation_prf(pred, gold: Mapping[Any, Iterable[Hashable]], level: str = "passage") -> tuple[float, float, float]:
    """Micro P/R/F1 over (response sentence, target) pairs.

    ``pred`` is a CitationReport or a plain mapping sentence -> targets.
    Empty prediction and empty gold together count as perfect.
    """
    if level not in ("passage", "sentence"):
        raise MetricError(f"unknown citation level {level!r}")
    p = {(r, t) for r, ts in citation_pairs(pred, level).items() for t in ts}
    g = {(int(r), t) for r, ts in gold.items() for t in ts}
    return _micro_prf(p, g)


def _micro_prf(p: set, g: set) -> tuple[float, float, float]:
    if not p and not g:
        return 1.0, 1.0, 1.0
    tp = len(p & g)
    precision = tp / len(p) if p else 0.0
    recall = tp / len(g) if g else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def hallucination_response_flag(report: HallucinationReport) -> bool:
    return hallucination_flag(LABEL_SCORES[v.f] for v in report.verdicts)


# -- run-report evaluation ---------------------------------------------------

METRICS = ("answerability", "jafs", "recall", "ndcg", "ece", "mae", "citation_prf")


def _require(rec: Mapping[str, Any], key: str, where: str) -> Any:
    if rec.get(key) is None:
        raise MetricError(f"{where}: field {key!r} missing for record {rec.get('id')!r}")
    return rec[key]


def _truth(gold: Mapping[str, Any]) -> AnswerabilityLabel:
    value = _require(gold, "answerability", "gold")
    if isinstance(value, bool):
        return AnswerabilityLabel.ANSWERABLE if value else AnswerabilityLabel.UNANSWERABLE
    return parse_answerability(str(value))


def evaluate_run(
    records: Sequence[Mapping[str, Any]],
    gold: Mapping[str, Mapping[str, Any]],
    metrics: Sequence[str],
    *,
    k: int = 5,
) -> dict[str, Any]:
    """Compute the requested metrics over run-report records joined to gold by ``id``."""
    unknown = [m for m in metrics if m not in METRICS]
    if unknown:
        raise MetricError(f"unknown metric(s): {', '.join(unknown)}; choose from {', '.join(METRICS)}")
    pairs = []
    for rec in records:
        rid = str(rec.get("id"))
        if rid not in gold:
            raise MetricError(f"no gold record for id {rid!r}")
        pairs.append((rec, gold[rid]))
    out: dict[str, Any] = {"n": len(pairs)}
    if not pairs:
        return out

    for metric in metrics:
        if metric == "answerability":
            preds = [
                AnswerabilityLabel.UNANSWERABLE if idk_judge(r["final_response"]) else AnswerabilityLabel.ANSWERABLE
                for r, _ in pairs
            ]
            report = classification_report(preds, [_truth(g) for _, g in pairs], labels=list(AnswerabilityLabel))
            out["answerability"] = report.to_dict()
        elif metric == "jafs":
            items = []
            for r, g in pairs:
                abstained = idk_judge(r["final_response"])
                truth = _truth(g)
                faith = None
                if not abstained and truth is AnswerabilityLabel.ANSWERABLE:
                    faith = r.get("faithfulness", g.get("faithfulness"))
                    if faith is None:
                        raise MetricError(f"jafs: field 'faithfulness' missing for record {r.get('id')!r}")
                items.append((abstained, truth, faith))
            rep = jafs_report(items)
            out["jafs"] = {"mean": rep.mean, "scores": list(rep.scores)}
        elif metric in ("recall", "ndcg"):
            values = []
            for r, g in pairs:
                gold_ids = _require(g, "gold_doc_ids", metric)
                ranked = [h["doc_id"] for h in r.get("retrieved", [])]
                if metric == "recall":
                    values.append(recall_at_k(ranked, gold_ids, k))
                else:
                    values.append(ndcg_at_k(ranked, {d: 1.0 for d in gold_ids}, k))
            out[f"{metric}@{k}"] = math.fsum(values) / len(values)
        elif metric == "ece":
            scored = [(r, g) for r, g in pairs if r.get("certainty") is not None]
            if not scored:
                raise MetricError("ece: field 'certainty' missing from every record")
            cal = ece(
                [int(r["certainty"]) for r, _ in scored],
                [bool(_require(g, "correct", "ece")) for _, g in scored],
            )
            out["ece"] = cal.to_dict()
        elif metric == "mae":
            scored = [(r, g) for r, g in pairs if r.get("certainty") is not None]
            if not scored:
                raise MetricError("mae: field 'certainty' missing from every record")
            out["mae"] = mae_certainty(
                [int(r["certainty"]) for r, _ in scored],
                [int(_require(g, "target_certainty", "mae")) for _, g in scored],
            )
        elif metric == "citation_prf":
            p: set = set()
            q: set = set()
            for r, g in pairs:
                rid = r["id"]
                for sent, targets in (r.get("citations") or {}).items():
                    p.update((rid, int(sent), t) for t in targets)
                for sent, targets in _require(g, "citations", metric).items():
                    q.update((rid, int(sent), t) for t in targets)
            precision, recall, f1 = _micro_prf(p, q)
            out["citation_prf"] = {"precision": precision, "recall": recall, "f1": f1}
    return out


def summary_table(report: Mapping[str, Any]) -> str:
    """Plain-text two-column summary of the headline numbers."""
    rows: list[tuple[str, str]] = [("records", str(report.get("n", 0)))]
    for key, value in report.items():
        if key == "n":
            continue
        if key == "answerability":
            for label, m in value["per_class"].items():
                rows.append((f"{label} F1", f"{m['f1']:.4f}"))
            rows.append(("weighted F1", f"{value['weighted_f1']:.4f}"))
        elif key == "jafs":
            rows.append(("JAFS", f"{value['mean']:.4f}"))
        elif key == "ece":
            rows.append(("ECE", f"{value['ece']:.4f}"))
            for b in value["bins"]:
                if b["count"]:
                    rows.append((f"  bin {b['level']}%", f"n={b['count']} acc={b['accuracy']:.4f}"))
        elif key == "citation_prf":
            rows.append(("citation P/R/F1", "{precision:.4f}/{recall:.4f}/{f1:.4f}".format(**value)))
        else:
            rows.append((key, f"{value:.4f}"))
    width = max(len(name) for name, _ in rows)
    return "\n".join(f"{name.ljust(width)}  {val}" for name, val in rows) + "\n"
