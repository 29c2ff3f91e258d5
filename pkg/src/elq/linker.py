"""Mention representations and entity scoring over a candidate set."""
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .catalog import EntityCatalog
from .encoder import QuestionEmbeddings
from .errors import DataError, DimensionMismatch
from .spans import SpanCandidate


@dataclass(frozen=True)
class MentionRep:
    span: SpanCandidate
    y: np.ndarray


@dataclass(frozen=True)
class CandidateEntry:
    index: int
    score: float
    log_p_entity: float


@dataclass(frozen=True)
class CandidateSet:
    mention: MentionRep
    entries: Tuple[CandidateEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)


def log_softmax(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    shifted = scores - scores.max()
    return shifted - np.log(np.exp(shifted).sum())


def mention_rep(emb: QuestionEmbeddings, span: SpanCandidate) -> MentionRep:
    if not 0 <= span.start <= span.end < emb.question.n:
        raise DataError(f"span [{span.start}, {span.end}] invalid for n={emb.question.n}")
    return MentionRep(span, emb.matrix[span.start : span.end + 1].mean(axis=0))


def _ranked(indices: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Order by score descending, ties by lower entity index."""
    return np.lexsort((indices, -scores))


def score_entities(
    rep: MentionRep, candidates: Sequence[Tuple[int, np.ndarray]]
) -> CandidateSet:
    if len(candidates) == 0:
        raise DataError("empty candidate list")
    indices = np.array([c[0] for c in candidates], dtype=np.int64)
    vectors = np.array([c[1] for c in candidates], dtype=np.float64)
    if vectors.shape[1] != rep.y.shape[0]:
        raise DimensionMismatch(f"entity dim {vectors.shape[1]} != mention dim {rep.y.shape[0]}")
    scores = vectors @ rep.y
    return _candidate_set(rep, indices, scores)


def _candidate_set(rep: MentionRep, indices: np.ndarray, scores: np.ndarray) -> CandidateSet:
    logp = log_softmax(scores)
    order = _ranked(indices, scores)
    entries = tuple(
        CandidateEntry(int(indices[k]), float(scores[k]), float(logp[k])) for k in order
    )
    return CandidateSet(rep, entries)


def score_retrieved(rep: MentionRep, hits: Sequence[Tuple[int, float]]) -> CandidateSet:
    """Softmax over already-scored search hits (index, inner product)."""
    if len(hits) == 0:
        raise DataError("empty candidate list")
    indices = np.array([h[0] for h in hits], dtype=np.int64)
    scores = np.array([h[1] for h in hits], dtype=np.float64)
    return _candidate_set(rep, indices, scores)


def score_all_entities(rep: MentionRep, catalog: EntityCatalog) -> CandidateSet:
    """Exact softmax over every catalog entity. Only sensible for small catalogs."""
    scores = catalog.embeddings.astype(np.float64) @ rep.y
    return _candidate_set(rep, np.arange(len(catalog)), scores)


def candidate_list(catalog: EntityCatalog, indices: Sequence[int]) -> List[Tuple[int, np.ndarray]]:
    return [(int(k), catalog.embeddings[int(k)]) for k in indices]
