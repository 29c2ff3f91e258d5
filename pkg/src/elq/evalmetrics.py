"""Weak-match precision / recall / F1 and the MD-only / EL-only diagnostics.

A predicted (entity, span) tuple matches a gold tuple when the entities are
equal and the spans share at least one token. Matching is one-to-one and
counts are micro-aggregated over questions. Ratios are exact fractions.
"""
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, Mapping, Set, Tuple

import numpy as np

from .catalog import EntityCatalog
from .errors import DataError
from .index import MipsIndex, search_many

Tuple_ = Tuple[str, int, int]  # (entity id, start, end), inclusive token indices


@dataclass
class EvalReport:
    correct: int
    n_gold: int
    n_pred: int
    per_question: Dict[str, Tuple[int, int, int]] = field(default_factory=dict)
    mode: str = "full"

    @property
    def precision(self) -> Fraction:
        return Fraction(self.correct, self.n_pred) if self.n_pred else Fraction(0)

    @property
    def recall(self) -> Fraction:
        return Fraction(self.correct, self.n_gold) if self.n_gold else Fraction(0)

    @property
    def f1(self) -> Fraction:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else Fraction(0)

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "correct": self.correct,
            "gold": self.n_gold,
            "predicted": self.n_pred,
            "precision": float(self.precision),
            "recall": float(self.recall),
            "f1": float(self.f1),
            "per_question": {k: {"correct": c, "gold": g, "predicted": p}
                             for k, (c, g, p) in self.per_question.items()},
        }

    def table(self) -> str:
        rows = [
            ("mode", self.mode),
            ("|C|", str(self.correct)),
            ("|T|", str(self.n_gold)),
            ("|T^|", str(self.n_pred)),
            ("precision", f"{float(self.precision):.4f}"),
            ("recall", f"{float(self.recall):.4f}"),
            ("F1", f"{float(self.f1):.4f}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def _check_gold(qid: str, gold: Set[Tuple_]) -> None:
    spans = sorted((s, e) for _, s, e in gold)
    for s, e in spans:
        if s < 0 or e < s:
            raise DataError(f"{qid}: invalid gold span [{s}, {e}]")
    for (s1, e1), (s2, e2) in zip(spans, spans[1:]):
        if s2 <= e1:
            raise DataError(f"{qid}: overlapping gold spans [{s1}, {e1}] and [{s2}, {e2}]")


def match_count(gold: Iterable[Tuple_], pred: Iterable[Tuple_], use_entity: bool = True, strong: bool = False) -> int:
    """Greedy one-to-one matching by overlap size (desc), then earlier gold start."""
    pairs = []
    for gi, (ge, gs, gend) in enumerate(sorted(gold, key=lambda t: (t[1], t[2], t[0]))):
        for pi, (pe, ps, pend) in enumerate(sorted(pred, key=lambda t: (t[1], t[2], t[0]))):
            if use_entity and ge != pe:
                continue
            if strong and (gs, gend) != (ps, pend):
                continue
            overlap = min(gend, pend) - max(gs, ps) + 1
            if overlap >= 1:
                pairs.append((-overlap, gs, gi, pi))
    pairs.sort()
    used_g, used_p = set(), set()
    for _, _, gi, pi in pairs:
        if gi not in used_g and pi not in used_p:
            used_g.add(gi)
            used_p.add(pi)
    return len(used_g)


def _evaluate(gold: Mapping[str, Iterable[Tuple_]], pred: Mapping[str, Iterable[Tuple_]], use_entity: bool, mode: str, strong: bool = False) -> EvalReport:
    extra = set(pred) - set(gold)
    if extra:
        raise DataError(f"predictions for unknown question ids: {sorted(extra)[:5]}")
    report = EvalReport(0, 0, 0, mode=mode)
    for qid, g in gold.items():
        g = set(map(tuple, g))
        p = set(map(tuple, pred.get(qid, ())))
        _check_gold(qid, g)
        c = match_count(g, p, use_entity, strong)
        report.correct += c
        report.n_gold += len(g)
        report.n_pred += len(p)
        report.per_question[qid] = (c, len(g), len(p))
    return report


def weak_match(gold: Mapping[str, Iterable[Tuple_]], pred: Mapping[str, Iterable[Tuple_]], strong: bool = False) -> EvalReport:
    """``strong=True`` additionally requires identical boundaries (debug only)."""
    return _evaluate(gold, pred, True, "strong" if strong else "full", strong)


def md_only(gold: Mapping[str, Iterable[Tuple_]], pred: Mapping[str, Iterable[Tuple_]]) -> EvalReport:
    return _evaluate(gold, pred, False, "md-only")


def el_only_predictions(
    gold: Mapping[str, Iterable[Tuple_]],
    token_matrices: Mapping[str, np.ndarray],
    index: MipsIndex,
    catalog: EntityCatalog,
    top_k: int = 10,
) -> Dict[str, Set[Tuple_]]:
    """Link every gold span to the argmax of its retrieved candidates."""
    pred: Dict[str, Set[Tuple_]] = {}
    for qid, tuples in gold.items():
        spans = sorted({(s, e) for _, s, e in tuples})
        if not spans:
            pred[qid] = set()
            continue
        q = token_matrices[qid]
        reps = np.stack([q[s : e + 1].mean(axis=0) for s, e in spans])
        hits = search_many(index, reps, top_k)
        # retrieval order is score desc, ties by lower index: the softmax argmax is row[0]
        pred[qid] = {(catalog.records[row[0][0]].id, s, e) for (s, e), row in zip(spans, hits)}
    return pred


def el_only(
    gold: Mapping[str, Iterable[Tuple_]],
    token_matrices: Mapping[str, np.ndarray],
    index: MipsIndex,
    catalog: EntityCatalog,
    top_k: int = 10,
) -> EvalReport:
    report = weak_match(gold, el_only_predictions(gold, token_matrices, index, catalog, top_k))
    report.mode = "el-only"
    return report
