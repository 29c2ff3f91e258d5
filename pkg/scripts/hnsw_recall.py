"""Recall@k and query latency of the HNSW index against exact search, swept over ef_search."""
import argparse
import time
from dataclasses import replace

import numpy as np
from threadpoolctl import threadpool_limits

from elq.catalog import build_catalog
from elq.index import HnswParams, build, recall_at_k, search_many
from elq.synthetic import WorkloadSpec, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--entities", type=int, default=10_000)
    ap.add_argument("--queries", type=int, default=200)
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--M", type=int, default=32)
    ap.add_argument("--ef-construction", type=int, default=200)
    ap.add_argument("--ef-search", type=int, nargs="+", default=[16, 32, 64, 128, 256])
    args = ap.parse_args()

    wl = generate(WorkloadSpec(n_entities=args.entities, n_train=0, n_dev=0, n_test=0))
    cat = build_catalog(wl.records, wl.embeddings)
    queries = np.random.default_rng(1).normal(size=(args.queries, cat.dim))
    with threadpool_limits(1):
        oracle = [[i for i, _ in row] for row in search_many(build(cat), queries, args.k)]
        t0 = time.perf_counter()
        base = build(cat, "hnsw", HnswParams(args.M, args.ef_construction, max(args.ef_search)))
        print(f"build: {time.perf_counter() - t0:.1f}s for {len(cat)} entities, M={args.M}")
        print(f"{'ef_search':>9}  {'recall':>7}  {'ms/query':>8}")
        for ef in args.ef_search:
            idx = replace(base, params=HnswParams(args.M, args.ef_construction, ef))
            search_many(idx, queries[:5], args.k)  # warm-up
            t0 = time.perf_counter()
            r = recall_at_k(idx, oracle, queries, args.k)
            ms = 1000 * (time.perf_counter() - t0) / len(queries)
            print(f"{ef:>9}  {r:>7.4f}  {ms:>8.3f}")


if __name__ == "__main__":
    main()
