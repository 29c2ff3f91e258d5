"""Candidate spans and mention-detection scores.

Spans are 0-based and inclusive on both ends. Span arrays are ordered by
``(start, end)`` ascending.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np

from .encoder import QuestionEmbeddings
from .errors import DimensionMismatch

DEFAULT_MAX_SPAN_LEN = 10


@dataclass(frozen=True, order=True)
class SpanCandidate:
    start: int
    end: int

    def __len__(self) -> int:
        return self.end - self.start + 1

    def overlaps(self, other: "SpanCandidate") -> bool:
        return self.start <= other.end and other.start <= self.end


@dataclass
class HeadWeights:
    w_start: np.ndarray
    w_end: np.ndarray
    w_mention: np.ndarray

    @classmethod
    def zeros(cls, dim: int) -> "HeadWeights":
        return cls(np.zeros(dim), np.zeros(dim), np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.w_start.shape[0]

    def stacked(self) -> np.ndarray:
        """3 x h matrix: rows are start, end, mention."""
        return np.stack([self.w_start, self.w_end, self.w_mention])

    def copy(self) -> "HeadWeights":
        return HeadWeights(self.w_start.copy(), self.w_end.copy(), self.w_mention.copy())


@dataclass(frozen=True)
class ScoredMention:
    span: SpanCandidate
    logit: float
    log_p_mention: float


def num_candidates(n: int, max_len: int) -> int:
    if n >= max_len:
        return max_len * (max_len + 1) // 2 + (n - max_len) * max_len
    return n * (n + 1) // 2


@lru_cache(maxsize=256)
def _span_arrays(n: int, max_len: int) -> Tuple[np.ndarray, np.ndarray]:
    starts, ends = [], []
    for i in range(n):
        for j in range(i, min(i + max_len, n)):
            starts.append(i)
            ends.append(j)
    starts = np.array(starts, dtype=np.int64)
    ends = np.array(ends, dtype=np.int64)
    starts.setflags(write=False)
    ends.setflags(write=False)
    return starts, ends


def span_arrays(n: int, max_len: int = DEFAULT_MAX_SPAN_LEN) -> Tuple[np.ndarray, np.ndarray]:
    if n < 0 or max_len < 1:
        raise ValueError(f"need n >= 0 and max_len >= 1, got n={n}, max_len={max_len}")
    return _span_arrays(n, max_len)


def enumerate_spans(n: int, max_len: int = DEFAULT_MAX_SPAN_LEN) -> List[SpanCandidate]:
    starts, ends = span_arrays(n, max_len)
    return [SpanCandidate(int(i), int(j)) for i, j in zip(starts, ends)]


def log_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    pos = x >= 0
    # each branch only ever exponentiates a non-positive number
    safe = np.where(pos, -x, x)
    return np.where(pos, -np.log1p(np.exp(safe)), x - np.log1p(np.exp(safe)))


def token_scores(q: np.ndarray, heads: HeadWeights) -> np.ndarray:
    """n x 3 matrix of (s_start, s_end, s_mention) per token."""
    if q.shape[1] != heads.dim:
        raise DimensionMismatch(f"token dim {q.shape[1]} != head dim {heads.dim}")
    return q @ heads.stacked().T


def span_logits(q: np.ndarray, heads: HeadWeights, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    s = token_scores(q, heads)
    prefix = np.concatenate([[0.0], np.cumsum(s[:, 2])])
    return s[starts, 0] + s[ends, 1] + (prefix[ends + 1] - prefix[starts])


def mention_scores(
    emb: QuestionEmbeddings, heads: HeadWeights, spans: Sequence[SpanCandidate]
) -> List[ScoredMention]:
    starts = np.array([sp.start for sp in spans], dtype=np.int64)
    ends = np.array([sp.end for sp in spans], dtype=np.int64)
    logits = span_logits(emb.matrix, heads, starts, ends)
    logp = log_sigmoid(logits)
    return [ScoredMention(sp, float(a), float(b)) for sp, a, b in zip(spans, logits, logp)]
