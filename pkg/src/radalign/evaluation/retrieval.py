"""Ranking metrics. Rankings sort by descending similarity, ties by ascending item id."""

from __future__ import annotations

import numpy as np


def _id_ranks(candidate_ids) -> np.ndarray:
    order = sorted(range(len(candidate_ids)), key=lambda i: candidate_ids[i])
    ranks = np.empty(len(candidate_ids), dtype=np.int64)
    ranks[order] = np.arange(len(candidate_ids))
    return ranks


def rank_order(similarities: np.ndarray, candidate_ids) -> np.ndarray:
    """Candidate indices of each row, best first."""
    S = np.atleast_2d(np.asarray(similarities, dtype=np.float64))
    id_rank = _id_ranks(candidate_ids)
    return np.stack([np.lexsort((id_rank, -row)) for row in S])


def average_precision_at_k(ranked_relevance, k: int, total_relevant: int) -> float:
    if total_relevant == 0:
        return 0.0
    rel = np.asarray(ranked_relevance[:k], dtype=bool)
    hits = np.cumsum(rel)
    precision = hits / np.arange(1, len(rel) + 1)
    return float(precision[rel].sum() / min(k, total_relevant))


def map_at_k(similarities, relevance, candidate_ids, k: int, exclude_self: bool = False) -> float:
    """Mean over query rows of AP truncated at ``k``.

    ``relevance`` is a boolean (queries x candidates) matrix. With
    ``exclude_self`` the query set equals the candidate set and each query's
    own row entry is removed from its ranking. Queries with no relevant
    candidate contribute 0.
    """
    S = np.array(similarities, dtype=np.float64, ndmin=2)
    R = np.array(relevance, dtype=bool, ndmin=2)
    if S.shape != R.shape or S.shape[1] != len(candidate_ids):
        raise ValueError("similarity, relevance and candidate ids disagree in shape")
    n_candidates = S.shape[1] - (1 if exclude_self else 0)
    if k < 1 or k > n_candidates:
        raise ValueError(f"k={k} outside 1..{n_candidates}")
    if exclude_self:
        if S.shape[0] != S.shape[1]:
            raise ValueError("exclude_self needs a square similarity matrix")
        np.fill_diagonal(S, -np.inf)
        np.fill_diagonal(R, False)
    order = rank_order(S, candidate_ids)
    aps = [average_precision_at_k(R[q, order[q]], k, int(R[q].sum())) for q in range(S.shape[0])]
    return float(np.mean(aps))


def recall_at_k(similarities, query_ids, candidate_ids, k: int) -> float:
    """Fraction of queries whose paired candidate (same id) ranks within the top ``k``."""
    S = np.atleast_2d(np.asarray(similarities, dtype=np.float64))
    if S.shape != (len(query_ids), len(candidate_ids)):
        raise ValueError("similarity shape does not match query/candidate ids")
    position = {c: j for j, c in enumerate(candidate_ids)}
    missing = [q for q in query_ids if q not in position]
    if missing:
        raise ValueError(f"queries without a paired candidate: {missing[:5]}")
    order = rank_order(S, candidate_ids)
    top = order[:, :k]
    hits = [position[q] in top[i] for i, q in enumerate(query_ids)]
    return float(np.mean(hits))


def shares_positive(labels_a: np.ndarray, labels_b: np.ndarray) -> np.ndarray:
    """Default image-image relevance: at least one abnormality positive in both."""
    A = np.asarray(labels_a) >= 0.5
    B = np.asarray(labels_b) >= 0.5
    return (A.astype(np.int64) @ B.T.astype(np.int64)) > 0
