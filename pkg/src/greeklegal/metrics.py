"""Entity-level NER scoring and multiclass classification scoring.

NER is scored on exact entity matches: a predicted span counts only when its
(type, start, end) triple appears in the gold annotation. Per-type precision,
recall and F1 come from the usual tp/fp/fn counts, with 0/0 ratios defined as
0. Micro aggregates pool counts over types; macro averages per-type F1 over
every type in the configured set (absent types contribute 0); weighted
averages use gold support as weights, so absent types carry weight 0.

Single-label classification uses micro scores, where precision, recall, F1
and accuracy coincide by construction.

Reports keep raw ratios; tables render percentages, one decimal for NER and
two for classification, with a fixed column order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import EntityTypeSet, repair_iob

NER_AGGREGATES = ("micro", "macro", "weighted")


@dataclass(frozen=True, order=True)
class EntitySpan:
    entity_type: str
    start: int
    end: int  # exclusive

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad span bounds [{self.start}, {self.end})")


def extract_spans(tags: Sequence[str], repair: bool = True) -> list[EntitySpan]:
    """Read maximal B-X (I-X)* runs out of a tag sequence.

    With repair=True orphan I-X tags are first promoted to B-X, so two
    adjacent same-type spans stay separate only when the second opens with B.
    """
    seq = repair_iob(tags) if repair else list(tags)
    spans: list[EntitySpan] = []
    i = 0
    while i < len(seq):
        if not seq[i].startswith("B-"):
            i += 1
            continue
        entity_type = seq[i][2:]
        j = i + 1
        while j < len(seq) and seq[j] == f"I-{entity_type}":
            j += 1
        spans.append(EntitySpan(entity_type, i, j))
        i = j
    return spans


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass(frozen=True)
class TypeScore:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class NerReport:
    types: EntityTypeSet
    per_type: Mapping[str, TypeScore]
    micro: TypeScore
    macro: TypeScore
    weighted: TypeScore

    def summary(self) -> dict[str, float]:
        """Flat percent view keyed by report column: F GPE LR ... micro macro weighted."""
        out = {
            self.types.short_label(t): 100.0 * self.per_type[t].f1 for t in self.types.types
        }
        out["micro"] = 100.0 * self.micro.f1
        out["macro"] = 100.0 * self.macro.f1
        out["weighted"] = 100.0 * self.weighted.f1
        return out


def score_ner(
    gold: Sequence[Sequence[str]],
    pred: Sequence[Sequence[str]],
    types: EntityTypeSet = EntityTypeSet(),
    repair: bool = True,
) -> NerReport:
    """Exact-match entity scoring over aligned sentence tag sequences."""
    if len(gold) != len(pred):
        raise ValueError("gold and prediction sentence counts differ")
    tp: dict[str, int] = {t: 0 for t in types.types}
    fp: dict[str, int] = {t: 0 for t in types.types}
    fn: dict[str, int] = {t: 0 for t in types.types}
    for idx, (g_tags, p_tags) in enumerate(zip(gold, pred)):
        if len(g_tags) != len(p_tags):
            raise ValueError(f"sentence {idx}: tag sequences differ in length")
        g_spans = set(extract_spans(g_tags, repair=repair))
        p_spans = set(extract_spans(p_tags, repair=repair))
        for span in g_spans | p_spans:
            if span.entity_type not in tp:
                raise ValueError(f"span type {span.entity_type!r} outside the type set")
        for span in g_spans & p_spans:
            tp[span.entity_type] += 1
        for span in p_spans - g_spans:
            fp[span.entity_type] += 1
        for span in g_spans - p_spans:
            fn[span.entity_type] += 1

    per_type = {
        t: TypeScore(*_prf(tp[t], fp[t], fn[t]), support=tp[t] + fn[t])
        for t in types.types
    }
    total_support = sum(s.support for s in per_type.values())
    micro = TypeScore(
        *_prf(sum(tp.values()), sum(fp.values()), sum(fn.values())), support=total_support
    )
    n = len(types.types)
    macro = TypeScore(
        precision=sum(s.precision for s in per_type.values()) / n,
        recall=sum(s.recall for s in per_type.values()) / n,
        f1=sum(s.f1 for s in per_type.values()) / n,
        support=total_support,
    )
    if total_support:
        weighted = TypeScore(
            precision=sum(s.precision * s.support for s in per_type.values()) / total_support,
            recall=sum(s.recall * s.support for s in per_type.values()) / total_support,
            f1=sum(s.f1 * s.support for s in per_type.values()) / total_support,
            support=total_support,
        )
    else:
        weighted = TypeScore(0.0, 0.0, 0.0, 0)
    return NerReport(types=types, per_type=per_type, micro=micro, macro=macro, weighted=weighted)


@dataclass(frozen=True)
class ClsReport:
    """Micro scores for single-label classification; all four values coincide."""

    accuracy: float
    total: int

    @property
    def precision(self) -> float:
        return self.accuracy

    @property
    def recall(self) -> float:
        return self.accuracy

    @property
    def f1(self) -> float:
        return self.accuracy

    def summary(self) -> dict[str, float]:
        pct = 100.0 * self.accuracy
        return {"precision": pct, "recall": pct, "f1": pct, "accuracy": pct}


def score_classification(gold: Sequence[str], pred: Sequence[str]) -> ClsReport:
    if len(gold) != len(pred):
        raise ValueError("gold and prediction label counts differ")
    if not gold:
        raise ValueError("cannot score an empty label list")
    correct = sum(1 for g, p in zip(gold, pred) if g == p)
    return ClsReport(accuracy=correct / len(gold), total=len(gold))


def ner_columns(types: EntityTypeSet = EntityTypeSet()) -> tuple[str, ...]:
    return tuple(types.short_label(t) for t in types.types) + NER_AGGREGATES


def render_ner_table(report: NerReport, decimals: int = 1) -> str:
    """Per-type and aggregate percentages as TSV, fixed column order."""
    cols = ner_columns(report.types)
    scores = [report.per_type[t] for t in report.types.types]
    scores += [report.micro, report.macro, report.weighted]
    lines = ["metric\t" + "\t".join(cols)]
    for metric in ("precision", "recall", "f1"):
        cells = [f"{100.0 * getattr(s, metric):.{decimals}f}" for s in scores]
        lines.append(metric + "\t" + "\t".join(cells))
    lines.append("support\t" + "\t".join(str(s.support) for s in scores))
    return "\n".join(lines) + "\n"


def render_cls_table(report: ClsReport, decimals: int = 2) -> str:
    lines = ["metric\tvalue"]
    for metric in ("precision", "recall", "f1", "accuracy"):
        lines.append(f"{metric}\t{report.summary()[metric]:.{decimals}f}")
    return "\n".join(lines) + "\n"
