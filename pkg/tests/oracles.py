"""Exhaustive reference decoder written directly from the decoding rules."""
import math

import numpy as np


def _logsig(z):
    return -math.log1p(math.exp(-z)) if z >= 0 else z - math.log1p(math.exp(z))


def exhaustive_decode(q, heads, entity_matrix, entity_ids, gamma, top_k=10, fallback=50, L=10):
    """Returns (surviving, output) as lists of (start, end, entity_index, joint)."""
    n = q.shape[0]
    E = np.asarray(entity_matrix, dtype=np.float64)
    spans = []
    for i in range(n):
        for j in range(i, min(i + L, n)):
            z = float(q[i] @ heads.w_start) + float(q[j] @ heads.w_end)
            z += sum(float(q[t] @ heads.w_mention) for t in range(i, j + 1))
            spans.append((i, j, _logsig(z)))
    spans.sort(key=lambda s: (-s[2], s[0], s[1] - s[0]))
    chosen = [s for s in spans if s[2] >= gamma]
    fell_back = not chosen
    if fell_back:
        chosen = spans[:fallback]

    pairs = []
    for i, j, lm in chosen:
        y = sum(q[t] for t in range(i, j + 1)) / (j - i + 1)
        scores = [(float(E[k] @ y), k) for k in range(len(E))]
        top = sorted(scores, key=lambda t: (-t[0], t[1]))[:top_k]
        mx = max(s for s, _ in top)
        lse = mx + math.log(sum(math.exp(s - mx) for s, _ in top))
        for s, k in top:
            pairs.append((i, j, k, lm + s - lse))

    surviving = [p for p in pairs if p[3] >= gamma]
    pool = surviving

    def key(p):
        return (-p[3], p[0], p[1] - p[0], entity_ids[p[2]])

    if fell_back and not surviving and pairs:
        pool = [min(pairs, key=key)]
    kept = []
    for p in sorted(pool, key=key):
        if all(p[1] < a[0] or a[1] < p[0] for a in kept):
            kept.append(p)
    kept.sort(key=lambda p: (p[0], p[1]))
    return surviving, kept
