"""One-pass inference: threshold mentions, retrieve, score jointly, de-overlap."""
import time
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .catalog import EntityCatalog
from .encoder import QuestionEmbeddings
from .errors import DataError
from .index import MipsIndex, search_many
from .linker import log_softmax
from .spans import DEFAULT_MAX_SPAN_LEN, HeadWeights, ScoredMention, SpanCandidate, log_sigmoid, span_arrays, span_logits

DEFAULT_GAMMA = -2.9


@dataclass(frozen=True)
class DecoderConfig:
    gamma: float = DEFAULT_GAMMA
    top_k: int = 10
    fallback: int = 50
    max_span_len: int = DEFAULT_MAX_SPAN_LEN

    def __post_init__(self):
        if self.top_k < 1 or self.fallback < 1 or self.max_span_len < 1:
            raise ValueError("top_k, fallback and max_span_len must be >= 1")


@dataclass(frozen=True)
class LinkedPrediction:
    entity_id: str
    entity_index: int
    span: SpanCandidate
    log_p_mention: float
    log_p_entity: float
    joint: float

    def sort_key(self):
        return (-self.joint, self.span.start, len(self.span), self.entity_id)

    def to_json(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "start": self.span.start,
            "end": self.span.end,
            "log_mention": self.log_p_mention,
            "log_entity": self.log_p_entity,
            "joint": self.joint,
        }


def _mention_order(logp: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    # score desc, then start asc, then shorter first
    return np.lexsort((ends - starts, starts, -logp))


def select_mentions(scored: Sequence[ScoredMention], gamma: float, fallback: int = 50) -> Tuple[List[ScoredMention], bool]:
    if not scored:
        raise DataError("no scored mentions")
    logp = np.array([m.log_p_mention for m in scored])
    starts = np.array([m.span.start for m in scored])
    ends = np.array([m.span.end for m in scored])
    order = _mention_order(logp, starts, ends)
    kept = [scored[k] for k in order if logp[k] >= gamma]
    if kept:
        return kept, False
    return [scored[k] for k in order[:fallback]], True


def remove_overlaps(predictions: Sequence[LinkedPrediction]) -> List[LinkedPrediction]:
    accepted: List[LinkedPrediction] = []
    for pred in sorted(predictions, key=LinkedPrediction.sort_key):
        if not any(pred.span.overlaps(a.span) for a in accepted):
            accepted.append(pred)
    return accepted


class _Timer:
    def __init__(self, sink: Optional[Dict[str, float]]):
        self.sink = sink

    @contextmanager
    def __call__(self, stage: str):
        if self.sink is None:
            yield
            return
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.sink[stage] = self.sink.get(stage, 0.0) + time.perf_counter() - t0


@dataclass
class DecodeTrace:
    """Intermediate state of one decode, exposed for tests and analysis."""

    selected: List[SpanCandidate]
    fallback_used: bool
    candidates: List[LinkedPrediction]  # every (mention, retrieved entity) pair
    surviving: List[LinkedPrediction]  # pairs with joint >= gamma
    output: List[LinkedPrediction]


def decode(
    emb: QuestionEmbeddings,
    heads: HeadWeights,
    index: MipsIndex,
    catalog: EntityCatalog,
    config: DecoderConfig = DecoderConfig(),
    timings: Optional[Dict[str, float]] = None,
) -> DecodeTrace:
    timer = _Timer(timings)
    q = emb.matrix
    n = q.shape[0]
    with timer("mention"):
        starts, ends = span_arrays(n, config.max_span_len)
        logp = log_sigmoid(span_logits(q, heads, starts, ends))
        order = _mention_order(logp, starts, ends)
        passing = order[logp[order] >= config.gamma]
        fallback_used = passing.size == 0
        chosen = order[: config.fallback] if fallback_used else passing
        prefix = np.vstack([np.zeros((1, q.shape[1])), np.cumsum(q, axis=0)])
        sel_s, sel_e = starts[chosen], ends[chosen]
        reps = (prefix[sel_e + 1] - prefix[sel_s]) / (sel_e - sel_s + 1)[:, None]
    with timer("retrieval"):
        hits = search_many(index, reps, config.top_k)
    with timer("decode"):
        candidates = []
        for k, row in zip(chosen, hits):
            span = SpanCandidate(int(starts[k]), int(ends[k]))
            lm = float(logp[k])
            ids = [i for i, _ in row]
            le = log_softmax(np.array([s for _, s in row]))
            for i, e_lp in zip(ids, le):
                e_lp = float(e_lp)
                candidates.append(
                    LinkedPrediction(catalog.records[i].id, i, span, lm, e_lp, lm + e_lp)
                )
        surviving = [c for c in candidates if c.joint >= config.gamma]
        pool = surviving
        if fallback_used and not surviving and candidates:
            pool = [min(candidates, key=LinkedPrediction.sort_key)]
        output = sorted(remove_overlaps(pool), key=lambda p: (p.span.start, p.span.end))
    return DecodeTrace(
        [SpanCandidate(int(starts[k]), int(ends[k])) for k in chosen],
        fallback_used, candidates, surviving, output,
    )


def link(
    emb: QuestionEmbeddings,
    heads: HeadWeights,
    index: MipsIndex,
    catalog: EntityCatalog,
    config: DecoderConfig = DecoderConfig(),
    timings: Optional[Dict[str, float]] = None,
) -> List[LinkedPrediction]:
    return decode(emb, heads, index, catalog, config, timings).output
