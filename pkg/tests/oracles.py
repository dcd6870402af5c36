"""Independent brute-force reimplementations used as test oracles."""

import math


def ndcg_oracle(ranked, relevant, k):
    relevant = set(relevant)
    dcg = 0.0
    for pos, item in enumerate(list(ranked)[:k], start=1):
        if item in relevant:
            dcg += 1.0 / math.log2(pos + 1)
    idcg = sum(1.0 / math.log2(pos + 1) for pos in range(1, min(len(relevant), k) + 1))
    return dcg / idcg


def recall_oracle(ranked, relevant, k):
    relevant = set(relevant)
    return len(relevant.intersection(list(ranked)[:k])) / len(relevant)


def tau_b_oracle(x, y):
    p = q = tx = ty = 0
    n = len(x)
    for a in range(n):
        for b in range(a + 1, n):
            dx = (x[a] > x[b]) - (x[a] < x[b])
            dy = (y[a] > y[b]) - (y[a] < y[b])
            if dx == 0 and dy == 0:
                continue
            if dx == 0:
                tx += 1
            elif dy == 0:
                ty += 1
            elif dx == dy:
                p += 1
            else:
                q += 1
    return (p - q) / math.sqrt((p + q + tx) * (p + q + ty))


def ranking_oracle(scores, candidates):
    """Descending score, ties by ascending item index."""
    return sorted(candidates, key=lambda i: (-scores[i], i))
