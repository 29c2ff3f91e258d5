import numpy as np
import pytest
from hypothesis import given, strategies as st

from elq.errors import DimensionMismatch, FormatError
from elq.index import HnswParams, build, draw_levels, load_index, reachable, recall_at_k, save_index, search, search_many

from conftest import make_catalog


def brute_topk(data, q, k):
    scores = data.astype(np.float64) @ q
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))[:k]


def test_exact_small():
    cat = make_catalog(np.eye(3))
    idx = build(cat, "exact")
    assert idx.size == 3
    (top, score), *_ = search(idx, np.array([0.0, 1.0, 0.0]), 1)
    assert top == 1 and score == 1.0
    assert len(search(idx, np.ones(3), 10)) == 3


def test_exact_ties_by_index():
    cat = make_catalog(np.ones((5, 2)))
    assert [i for i, _ in search(build(cat), np.ones(2), 3)] == [0, 1, 2]


@given(st.integers(1, 40), st.integers(1, 12), st.integers(0, 2**31))
def test_exact_matches_brute_force(m, k, seed):
    rng = np.random.default_rng(seed)
    # coarse values force plenty of ties
    data = rng.integers(-2, 3, size=(m, 3)).astype(np.float32)
    q = rng.integers(-2, 3, size=3).astype(np.float64)
    idx = build(make_catalog(data))
    assert [i for i, _ in search(idx, q, k)] == brute_topk(data, q, k)


def test_hnsw_single_node():
    idx = build(make_catalog([[1.0, 2.0]]), "hnsw")
    assert search(idx, np.array([0.0, 1.0]), 5) == [(0, 2.0)]


def test_hnsw_deterministic_and_reachable(rng):
    cat = make_catalog(rng.normal(size=(600, 16)))
    params = HnswParams(M=8, ef_construction=64, ef_search=64)
    a = build(cat, "hnsw", params, seed=5)
    b = build(cat, "hnsw", params, seed=5)
    assert np.array_equal(a.adj0, b.adj0) and np.array_equal(a.adj_up, b.adj_up)
    assert a.entry == b.entry
    assert reachable(a).all()


def test_hnsw_recall_small(rng):
    data = rng.normal(size=(2000, 32))
    cat = make_catalog(data)
    exact, approx = build(cat), build(cat, "hnsw", HnswParams(M=16, ef_construction=100, ef_search=100))
    queries = rng.normal(size=(50, 32))
    oracle = [[i for i, _ in row] for row in search_many(exact, queries, 10)]
    assert recall_at_k(exact, oracle, queries, 10) == 1.0
    assert recall_at_k(approx, oracle, queries, 10) >= 0.9


def test_hnsw_hits_are_sorted_and_scored(rng):
    data = rng.normal(size=(300, 8))
    idx = build(make_catalog(data), "hnsw", HnswParams(M=8, ef_construction=40, ef_search=40))
    q = rng.normal(size=8)
    hits = search(idx, q, 10)
    scores = [s for _, s in hits]
    assert scores == sorted(scores, reverse=True)
    assert np.allclose(scores, data.astype(np.float32).astype(np.float64)[[i for i, _ in hits]] @ q)


def test_levels_geometric():
    lv = draw_levels(100000, 32, 0)
    # P(level >= 1) = 1/M
    assert abs((lv >= 1).mean() - 1 / 32) < 0.003
    assert np.array_equal(lv, draw_levels(100000, 32, 0))


def test_query_dim_checked():
    idx = build(make_catalog(np.eye(3)))
    with pytest.raises(DimensionMismatch):
        search(idx, np.ones(2), 1)


@pytest.mark.parametrize("mode", ["exact", "hnsw"])
def test_persistence_roundtrip(tmp_path, rng, mode):
    cat = make_catalog(rng.normal(size=(200, 8)))
    idx = build(cat, mode, HnswParams(M=6, ef_construction=30, ef_search=30), seed=3)
    save_index(idx, tmp_path / "i.elqi")
    back = load_index(tmp_path / "i.elqi", cat)
    q = rng.normal(size=8)
    assert search(back, q, 10) == search(idx, q, 10)


def test_load_rejects_other_catalog_and_garbage(tmp_path, rng):
    cat = make_catalog(rng.normal(size=(5, 3)))
    save_index(build(cat), tmp_path / "i.elqi")
    with pytest.raises(DimensionMismatch):
        load_index(tmp_path / "i.elqi", make_catalog(rng.normal(size=(5, 3))))
    (tmp_path / "bad").write_bytes(b"nope")
    with pytest.raises(FormatError):
        load_index(tmp_path / "bad", cat)
