"""Maximum-inner-product search over the catalog embedding matrix.

Two modes share one interface: ``exact`` (a full scan) and ``hnsw`` (a
hierarchical navigable small-world graph using the raw inner product as its
similarity). Results are always sorted by score descending, ties broken by
lower entity index, and scores are exact inner products of the returned ids.
"""
import heapq
import math
import struct
from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numba import njit

from .catalog import EntityCatalog
from .errors import DataError, DimensionMismatch, FormatError, VersionMismatch

INDEX_MAGIC = b"ELQI"
INDEX_VERSION = 1
MODES = ("exact", "hnsw")


@dataclass(frozen=True)
class HnswParams:
    M: int = 32
    ef_construction: int = 200
    ef_search: int = 256


# --------------------------------------------------------------------------
# numba kernels


@njit(cache=True, inline="always")
def _dot(a, b):
    s = 0.0
    for t in range(a.shape[0]):
        s += a[t] * b[t]
    return s


@njit(cache=True)
def _greedy(data, q, ep, adj, cnt):
    best = ep
    best_ip = _dot(data[ep], q)
    changed = True
    while changed:
        changed = False
        cur = best
        for t in range(cnt[cur]):
            e = np.int64(adj[cur, t])
            d = _dot(data[e], q)
            if d > best_ip or (d == best_ip and e < best):
                best_ip = d
                best = e
                changed = True
    return best


@njit(cache=True)
def _search_layer(data, q, eps, ef, adj, cnt, visited, stamp):
    """Best-first beam search; returns (ids, ips) sorted by ip desc, id asc."""
    e0 = np.int64(eps[0])
    d0 = _dot(data[e0], q)
    visited[e0] = stamp
    cand = [(-d0, e0)]  # min-heap: most similar first
    res = [(d0, -e0)]  # min-heap: least similar first
    for k in range(1, eps.shape[0]):
        e = np.int64(eps[k])
        if visited[e] == stamp:
            continue
        visited[e] = stamp
        d = _dot(data[e], q)
        heapq.heappush(cand, (-d, e))
        heapq.heappush(res, (d, -e))
        if len(res) > ef:
            heapq.heappop(res)
    while len(cand) > 0:
        negd, c = heapq.heappop(cand)
        if len(res) >= ef and -negd < res[0][0]:
            break
        for t in range(cnt[c]):
            e = np.int64(adj[c, t])
            if visited[e] == stamp:
                continue
            visited[e] = stamp
            d = _dot(data[e], q)
            if len(res) < ef or d > res[0][0]:
                heapq.heappush(cand, (-d, e))
                heapq.heappush(res, (d, -e))
                if len(res) > ef:
                    heapq.heappop(res)
    n = len(res)
    ids = np.empty(n, np.int64)
    ips = np.empty(n, np.float64)
    for k in range(n - 1, -1, -1):
        d, negid = heapq.heappop(res)
        ids[k] = -negid
        ips[k] = d
    return ids, ips


@njit(cache=True)
def _sort_desc(ids, ips):
    o1 = np.argsort(ids, kind="mergesort")
    ids = ids[o1]
    ips = ips[o1]
    o2 = np.argsort(-ips, kind="mergesort")
    return ids[o2], ips[o2]


@njit(cache=True)
def _select_neighbors(data, ids, ips, M):
    """Diversity heuristic: keep a candidate only if it is more similar to the
    base point than to every neighbor already kept. ``ids`` must be sorted."""
    out = np.empty(M, np.int64)
    n = 0
    for k in range(ids.shape[0]):
        e = ids[k]
        ok = True
        for r in range(n):
            if _dot(data[e], data[out[r]]) > ips[k]:
                ok = False
                break
        if ok:
            out[n] = e
            n += 1
            if n == M:
                break
    return out[:n]


@njit(cache=True)
def _link(data, x, layer_adj, layer_cnt, ids, ips, M, cap):
    sel = _select_neighbors(data, ids, ips, M)
    for t in range(sel.shape[0]):
        layer_adj[x, t] = sel[t]
    layer_cnt[x] = sel.shape[0]
    for t in range(sel.shape[0]):
        nb = sel[t]
        c = layer_cnt[nb]
        if c < cap:
            layer_adj[nb, c] = x
            layer_cnt[nb] = c + 1
            continue
        pool = np.empty(c + 1, np.int64)
        pool_ip = np.empty(c + 1, np.float64)
        for u in range(c):
            pool[u] = layer_adj[nb, u]
            pool_ip[u] = _dot(data[nb], data[pool[u]])
        pool[c] = x
        pool_ip[c] = _dot(data[nb], data[x])
        pool, pool_ip = _sort_desc(pool, pool_ip)
        keep = _select_neighbors(data, pool, pool_ip, cap)
        for u in range(keep.shape[0]):
            layer_adj[nb, u] = keep[u]
        for u in range(keep.shape[0], cap):
            layer_adj[nb, u] = -1
        layer_cnt[nb] = keep.shape[0]


@njit(cache=True)
def _build(data, levels, M, ef_construction, adj0, cnt0, adj_up, cnt_up):
    m = data.shape[0]
    visited = np.zeros(m, np.int64)
    stamp = 0
    entry = 0
    top = levels[0]
    for x in range(1, m):
        q = data[x]
        lx = levels[x]
        ep = entry
        for layer in range(top, lx, -1):
            ep = _greedy(data, q, ep, adj_up[layer - 1], cnt_up[layer - 1])
        eps = np.array([ep], np.int64)
        for layer in range(min(lx, top), -1, -1):
            stamp += 1
            if layer == 0:
                ids, ips = _search_layer(data, q, eps, ef_construction, adj0, cnt0, visited, stamp)
                _link(data, x, adj0, cnt0, ids, ips, M, 2 * M)
            else:
                ids, ips = _search_layer(
                    data, q, eps, ef_construction, adj_up[layer - 1], cnt_up[layer - 1], visited, stamp
                )
                _link(data, x, adj_up[layer - 1], cnt_up[layer - 1], ids, ips, M, M)
            eps = ids
        if lx > top:
            top = lx
            entry = x
    return entry


@njit(cache=True)
def _query(data, q, k, ef, entry, top, adj0, cnt0, adj_up, cnt_up):
    visited = np.zeros(data.shape[0], np.int64)
    ep = entry
    for layer in range(top, 0, -1):
        ep = _greedy(data, q, ep, adj_up[layer - 1], cnt_up[layer - 1])
    eps = np.array([ep], np.int64)
    ids, ips = _search_layer(data, q, eps, max(ef, k), adj0, cnt0, visited, 1)
    return ids[:k], ips[:k]


# --------------------------------------------------------------------------


@dataclass
class MipsIndex:
    mode: str
    data: np.ndarray  # m x h float64 copy of the catalog rows
    fingerprint: bytes
    params: HnswParams = field(default_factory=HnswParams)
    seed: int = 0
    levels: Optional[np.ndarray] = None
    entry: int = 0
    adj0: Optional[np.ndarray] = None
    cnt0: Optional[np.ndarray] = None
    adj_up: Optional[np.ndarray] = None
    cnt_up: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def top_level(self) -> int:
        return 0 if self.levels is None else int(self.levels.max())

    def neighbors(self, layer: int, node: int) -> np.ndarray:
        if layer == 0:
            return self.adj0[node, : self.cnt0[node]]
        return self.adj_up[layer - 1, node, : self.cnt_up[layer - 1, node]]


def draw_levels(m: int, M: int, seed: int) -> np.ndarray:
    """Geometric layer assignment with level multiplier 1/ln(M)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    u = rng.random(m)
    mult = 1.0 / math.log(M)
    return np.floor(-np.log1p(-u) * mult).astype(np.int64)


def build(
    catalog: EntityCatalog, mode: str = "exact", params: HnswParams = HnswParams(), seed: int = 0
) -> MipsIndex:
    if len(catalog) == 0:
        raise DataError("cannot index an empty catalog")
    if mode not in MODES:
        raise ValueError(f"unknown index mode {mode!r}; expected one of {MODES}")
    data = np.ascontiguousarray(catalog.embeddings, dtype=np.float64)
    index = MipsIndex(mode, data, catalog.fingerprint(), params, seed)
    if mode == "hnsw":
        _build_hnsw(index)
    return index


def _build_hnsw(index: MipsIndex) -> None:
    m, M = index.size, index.params.M
    if M < 2:
        raise ValueError("HNSW needs M >= 2")
    levels = draw_levels(m, M, index.seed)
    top = int(levels.max())
    index.levels = levels
    index.adj0 = np.full((m, 2 * M), -1, np.int32)
    index.cnt0 = np.zeros(m, np.int32)
    index.adj_up = np.full((top, m, M), -1, np.int32)
    index.cnt_up = np.zeros((top, m), np.int32)
    index.entry = int(
        _build(index.data, levels, M, index.params.ef_construction,
               index.adj0, index.cnt0, index.adj_up, index.cnt_up)
    )
    _repair_reachability(index)


def reachable(index: MipsIndex) -> np.ndarray:
    """Boolean mask of layer-0 nodes reachable from the entry point."""
    seen = np.zeros(index.size, bool)
    seen[index.entry] = True
    todo = deque([index.entry])
    while todo:
        node = todo.popleft()
        for nb in index.neighbors(0, node):
            if not seen[nb]:
                seen[nb] = True
                todo.append(nb)
    return seen


def _repair_reachability(index: MipsIndex) -> None:
    # Pruning can orphan a node; link each orphan from its most similar
    # reachable node that still has spare capacity.
    seen = reachable(index)
    cap = 2 * index.params.M
    for node in np.flatnonzero(~seen):
        if seen[node]:
            continue
        sims = index.data @ index.data[node]
        sims[~seen | (index.cnt0 >= cap)] = -np.inf
        src = int(np.argmax(sims))
        if not np.isfinite(sims[src]):
            raise RuntimeError("no spare capacity to reconnect HNSW layer 0")
        index.adj0[src, index.cnt0[src]] = node
        index.cnt0[src] += 1
        seen[node] = True
        todo = deque([int(node)])
        while todo:
            cur = todo.popleft()
            for nb in index.neighbors(0, cur):
                if not seen[nb]:
                    seen[nb] = True
                    todo.append(nb)


def _exact_topk(scores: np.ndarray, k: int) -> np.ndarray:
    m = scores.shape[0]
    if k < m:
        kth = np.partition(scores, m - k)[m - k]
        pool = np.flatnonzero(scores >= kth)
    else:
        pool = np.arange(m)
    order = np.lexsort((pool, -scores[pool]))
    return pool[order[:k]]


def search(index: MipsIndex, query, k: int) -> List[Tuple[int, float]]:
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.ascontiguousarray(query, dtype=np.float64)
    if q.shape != (index.dim,):
        raise DimensionMismatch(f"query shape {q.shape}, index dim {index.dim}")
    k = min(k, index.size)
    if index.mode == "exact":
        scores = index.data @ q
        ids = _exact_topk(scores, k)
        return [(int(i), float(scores[i])) for i in ids]
    ids, ips = _query(
        index.data, q, k, index.params.ef_search, index.entry, index.top_level,
        index.adj0, index.cnt0, index.adj_up, index.cnt_up,
    )
    return [(int(i), float(s)) for i, s in zip(ids, ips)]


def search_many(index: MipsIndex, queries, k: int) -> List[List[Tuple[int, float]]]:
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if index.mode != "exact":
        return [search(index, q, k) for q in queries]
    if queries.shape[1] != index.dim:
        raise DimensionMismatch(f"query dim {queries.shape[1]}, index dim {index.dim}")
    k = min(k, index.size)
    out = []
    for q in queries:
        # per-row matvec keeps scores bit-identical to single-query search
        scores = index.data @ q
        out.append([(int(i), float(scores[i])) for i in _exact_topk(scores, k)])
    return out


def recall_at_k(index: MipsIndex, oracle: Sequence[Sequence[int]], queries, k: int) -> float:
    """Mean |approx ∩ exact| / k over queries; ``oracle`` holds exact id lists."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if len(queries) == 0:
        return 1.0
    total = 0.0
    for q, truth in zip(queries, oracle):
        got = {i for i, _ in search(index, q, k)}
        total += len(got & set(list(truth)[:k])) / min(k, len(truth))
    return total / len(queries)


# --------------------------------------------------------------------------
# persistence

_HEAD = struct.Struct("<4sIB16sQIIIIIII")


def save_index(index: MipsIndex, path) -> None:
    mode = MODES.index(index.mode)
    p = index.params
    top = index.top_level
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(INDEX_MAGIC, INDEX_VERSION, mode, index.fingerprint, index.seed,
                            index.size, index.dim, p.M, p.ef_construction, p.ef_search,
                            index.entry, top))
        if index.mode == "hnsw":
            fh.write(index.levels.astype("<i4").tobytes())
            fh.write(index.cnt0.astype("<i4").tobytes())
            fh.write(index.adj0.astype("<i4").tobytes())
            fh.write(index.cnt_up.astype("<i4").tobytes())
            fh.write(index.adj_up.astype("<i4").tobytes())


def load_index(path, catalog: EntityCatalog) -> MipsIndex:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEAD.size or raw[:4] != INDEX_MAGIC:
        raise FormatError(f"{path}: not an index file")
    (_, version, mode, fp, seed, m, dim, M, efc, efs, entry, top) = _HEAD.unpack_from(raw)
    if version != INDEX_VERSION:
        raise VersionMismatch(f"{path}: index version {version}, expected {INDEX_VERSION}")
    if fp != catalog.fingerprint() or m != len(catalog) or dim != catalog.dim:
        raise DimensionMismatch(f"{path}: index was built for a different catalog")
    index = MipsIndex(MODES[mode], np.ascontiguousarray(catalog.embeddings, dtype=np.float64),
                      fp, HnswParams(M, efc, efs), seed, entry=entry)
    if index.mode == "hnsw":
        off = _HEAD.size

        def take(count, shape):
            nonlocal off
            arr = np.frombuffer(raw, "<i4", count, off).reshape(shape)
            off += 4 * count
            return arr

        try:
            index.levels = take(m, (m,)).astype(np.int64)
            index.cnt0 = take(m, (m,)).astype(np.int32)
            index.adj0 = take(m * 2 * M, (m, 2 * M)).astype(np.int32)
            index.cnt_up = take(top * m, (top, m)).astype(np.int32)
            index.adj_up = take(top * m * M, (top, m, M)).astype(np.int32)
        except ValueError:
            raise FormatError(f"{path}: truncated adjacency data") from None
        if off != len(raw):
            raise FormatError(f"{path}: trailing bytes in index file")
    return index
