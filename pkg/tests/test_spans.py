import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from elq.errors import DimensionMismatch
from elq.spans import (
    HeadWeights,
    SpanCandidate,
    enumerate_spans,
    log_sigmoid,
    mention_scores,
    num_candidates,
    span_logits,
    token_scores,
)

from conftest import make_emb


def brute_spans(n, L):
    return [(i, j) for i in range(n) for j in range(i, n) if j - i + 1 <= L]


def test_candidate_counts():
    assert num_candidates(5, 10) == 15
    assert num_candidates(12, 10) == 75
    assert len(enumerate_spans(12, 10)) == len(brute_spans(12, 10)) == 75
    assert enumerate_spans(1, 1) == [SpanCandidate(0, 0)]


@given(st.integers(0, 70), st.integers(1, 15))
def test_enumeration_matches_brute_force(n, L):
    got = [(s.start, s.end) for s in enumerate_spans(n, L)]
    assert got == brute_spans(n, L)
    assert len(got) == num_candidates(n, L)


def test_zero_heads_give_half():
    q = np.random.default_rng(0).normal(size=(4, 3))
    scored = mention_scores(make_emb(q), HeadWeights.zeros(3), enumerate_spans(4))
    assert all(m.logit == 0.0 for m in scored)
    assert all(m.log_p_mention == pytest.approx(math.log(0.5)) for m in scored)


def test_sigma_four():
    # one-hot token rows pick out each head's contribution
    q = np.eye(3)[:2]  # two tokens
    heads = HeadWeights(np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), np.array([1.0, 1.0, 0]))
    # span [0,1]: s_start(0)=1, s_end(1)=1, sum s_mention = 1 + 1 = 2
    logit = span_logits(q, heads, np.array([0]), np.array([1]))[0]
    assert logit == 4.0
    assert math.exp(log_sigmoid(logit)) == pytest.approx(0.98201, abs=1e-5)


def test_linearity_in_start_head(rng):
    q = rng.normal(size=(5, 4))
    h = HeadWeights(*(rng.normal(size=4) for _ in range(3)))
    doubled = HeadWeights(2 * h.w_start, h.w_end, h.w_mention)
    assert np.allclose(token_scores(q, doubled)[:, 0], 2 * token_scores(q, h)[:, 0])


@given(st.integers(1, 9), st.integers(1, 6), st.integers(0, 2**31))
def test_prefix_sum_logits_match_direct(n, L, seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n, 3))
    h = HeadWeights(*(rng.normal(size=3) for _ in range(3)))
    spans = enumerate_spans(n, L)
    got = span_logits(q, h, np.array([s.start for s in spans]), np.array([s.end for s in spans]))
    want = [q[s.start] @ h.w_start + q[s.end] @ h.w_end + sum(q[t] @ h.w_mention for t in range(s.start, s.end + 1))
            for s in spans]
    assert np.allclose(got, want)


@given(st.floats(-800, 800))
def test_log_sigmoid_stable(x):
    v = float(log_sigmoid(np.float64(x)))
    assert math.isfinite(v) and v <= 0.0
    ref = -math.log1p(math.exp(-x)) if x > -30 else x - math.log1p(math.exp(x))
    assert v == pytest.approx(ref, rel=1e-12, abs=1e-300)


def test_head_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        token_scores(np.zeros((2, 3)), HeadWeights.zeros(4))


def test_span_overlap():
    assert SpanCandidate(0, 2).overlaps(SpanCandidate(2, 4))
    assert not SpanCandidate(0, 1).overlaps(SpanCandidate(2, 3))
    assert len(SpanCandidate(3, 5)) == 3
