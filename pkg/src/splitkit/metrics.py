"""Top-K ranking metrics with binary relevance."""

from __future__ import annotations

import numpy as np


def _as_relevant(relevant):
    rel = np.unique(np.asarray(list(relevant) if isinstance(relevant, (set, frozenset)) else relevant))
    if rel.size == 0:
        raise ValueError("relevant set is empty; the user cannot be evaluated")
    return rel


def _check_k(k):
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    return int(k)


def ndcg_at_k(ranked, relevant, k=10):
    """Normalized DCG of the first ``k`` entries of ``ranked``.

    DCG sums ``1 / log2(p + 1)`` over relevant hits at positions ``p``
    (1-based); the ideal DCG places ``min(|relevant|, k)`` hits first.
    """
    k = _check_k(k)
    rel = _as_relevant(relevant)
    top = np.asarray(ranked)[:k]
    hits = np.isin(top, rel)
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    dcg = discounts[:len(top)][hits].sum()
    idcg = discounts[:min(rel.size, k)].sum()
    return float(dcg / idcg)


def recall_at_k(ranked, relevant, k=10, truncated=False):
    """Share of relevant items retrieved in the top ``k``.

    ``truncated=True`` divides by ``min(|relevant|, k)`` instead of ``|relevant|``.
    """
    k = _check_k(k)
    rel = _as_relevant(relevant)
    hits = int(np.isin(np.asarray(ranked)[:k], rel).sum())
    return hits / (min(rel.size, k) if truncated else rel.size)


def rank_candidates(scores, candidates):
    """Order ``candidates`` by descending ``scores[candidates]``, ties by ascending index."""
    candidates = np.sort(np.asarray(candidates, dtype=np.int64))
    order = np.argsort(-scores[candidates], kind="stable")
    return candidates[order]


def top_k(scores, k, candidates=None):
    """The ``k`` best candidates, identical to ``rank_candidates(...)[:k]``.

    Uses a partial partition first, so only items tied with the k-th score
    are fully sorted.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if candidates is None:
        candidates = np.arange(len(scores), dtype=np.int64)
    else:
        candidates = np.asarray(candidates, dtype=np.int64)
    if len(candidates) <= k:
        return rank_candidates(scores, candidates)
    cand_scores = scores[candidates]
    kth = np.partition(cand_scores, len(candidates) - k)[len(candidates) - k]
    return rank_candidates(scores, candidates[cand_scores >= kth])[:k]
