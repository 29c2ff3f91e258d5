"""Batch orchestration shared by the CLI and experiment scripts."""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .catalog import EntityCatalog
from .data import QuestionRecord, gold_tuples
from .decoder import DecoderConfig, LinkedPrediction, decode, link
from .encoder import QuestionEmbeddings, SyntheticEncoder, encode_question
from .evalmetrics import EvalReport, weak_match
from .index import MipsIndex
from .spans import HeadWeights

STAGES = ("encode", "mention", "retrieval", "decode")


def encode_all(
    records: Sequence[QuestionRecord],
    encoder: SyntheticEncoder,
    features: Optional[Mapping[str, np.ndarray]] = None,
) -> List[QuestionEmbeddings]:
    out = []
    for rec in records:
        base = None if features is None else np.asarray(features[rec.id], dtype=np.float64)
        out.append(encode_question(encoder, rec.tokenized(), base))
    return out


def link_all(
    embs: Sequence[QuestionEmbeddings],
    heads: HeadWeights,
    index: MipsIndex,
    catalog: EntityCatalog,
    config: DecoderConfig = DecoderConfig(),
    threads: int = 1,
) -> List[Tuple[str, List[LinkedPrediction]]]:
    """Link every question; output order always follows the input order."""

    def one(emb):
        return emb.question.id, link(emb, heads, index, catalog, config)

    if threads <= 1:
        return [one(e) for e in embs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, embs))


def as_tuples(linked: Sequence[Tuple[str, Sequence[LinkedPrediction]]]):
    return {qid: {(p.entity_id, p.span.start, p.span.end) for p in preds} for qid, preds in linked}


def evaluate_linked(records: Sequence[QuestionRecord], linked) -> EvalReport:
    return weak_match(gold_tuples(records), as_tuples(linked))


def tune_gamma(
    embs: Sequence[QuestionEmbeddings],
    records: Sequence[QuestionRecord],
    heads: HeadWeights,
    index: MipsIndex,
    catalog: EntityCatalog,
    config: DecoderConfig = DecoderConfig(),
    grid: Optional[Sequence[float]] = None,
) -> Tuple[float, Dict[float, float]]:
    """Grid search for the threshold maximising weak-match F1 on held-out data.

    Ties go to the larger threshold (fewer predictions).
    """
    if grid is None:
        grid = [round(g, 2) for g in np.arange(-5.0, -0.49, 0.25)]
    scores = {}
    for g in grid:
        cfg = DecoderConfig(g, config.top_k, config.fallback, config.max_span_len)
        scores[g] = float(evaluate_linked(records, link_all(embs, heads, index, catalog, cfg)).f1)
    best = max(scores, key=lambda g: (scores[g], g))
    return best, scores


@dataclass
class BenchReport:
    n_questions: int
    repetitions: int
    samples: List[float]  # total wall seconds per repetition
    stage_seconds: Dict[str, float]  # mean per repetition
    batch_size: int = 1

    @property
    def total_seconds(self) -> float:
        return float(np.mean(self.samples))

    @property
    def questions_per_second(self) -> float:
        return self.n_questions / self.total_seconds if self.total_seconds > 0 else float("inf")

    def to_json(self) -> dict:
        out = asdict(self)
        out["total_seconds"] = self.total_seconds
        out["questions_per_second"] = self.questions_per_second
        return out


def bench(
    records: Sequence[QuestionRecord],
    encoder: SyntheticEncoder,
    heads: HeadWeights,
    index: MipsIndex,
    catalog: EntityCatalog,
    config: DecoderConfig = DecoderConfig(),
    features: Optional[Mapping[str, np.ndarray]] = None,
    repetitions: int = 1,
) -> BenchReport:
    """Time questions one at a time, stage by stage. Caller pins BLAS threads."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    samples = []
    stage_sum = dict.fromkeys(STAGES, 0.0)
    for _ in range(repetitions):
        stages = dict.fromkeys(STAGES, 0.0)
        t0 = time.perf_counter()
        for rec in records:
            ts = time.perf_counter()
            base = None if features is None else np.asarray(features[rec.id], dtype=np.float64)
            emb = encode_question(encoder, rec.tokenized(), base)
            stages["encode"] += time.perf_counter() - ts
            decode(emb, heads, index, catalog, config, timings=stages)
        samples.append(time.perf_counter() - t0)
        for k in STAGES:
            stage_sum[k] += stages[k]
    return BenchReport(
        len(records), repetitions, samples, {k: v / repetitions for k, v in stage_sum.items()}
    )
