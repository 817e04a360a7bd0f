"""Ranking and accuracy metrics over sampled candidate pools."""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RankedPool:
    user_id: str
    target_score: float
    negative_scores: tuple

    @property
    def rank(self) -> int:
        """1-based rank of the positive; equal-scored negatives rank ahead of it."""
        return 1 + sum(1 for s in self.negative_scores if s >= self.target_score)

    def flat(self) -> tuple:
        scores = (self.target_score,) + tuple(self.negative_scores)
        labels = (1,) + (0,) * len(self.negative_scores)
        return scores, labels


def pools_from_scores(user_ids, scores: np.ndarray) -> list:
    """Column 0 of ``scores`` holds each pool's positive."""
    return [RankedPool(u, float(row[0]), tuple(float(s) for s in row[1:])) for u, row in zip(user_ids, scores)]


def _flatten(data) -> tuple:
    if data and isinstance(data[0], RankedPool):
        scores, labels = [], []
        for pool in data:
            s, y = pool.flat()
            scores.extend(s)
            labels.extend(y)
        return np.asarray(scores, float), np.asarray(labels, int)
    scores, labels = zip(*data) if data else ((), ())
    return np.asarray(scores, float), np.asarray(labels, int)


def auc(data) -> float:
    """Mann-Whitney AUC over pools or a flat list of (score, label); ties count 1/2."""
    scores, labels = _flatten(list(data))
    n_pos = int((labels == 1).sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def gauc(pools) -> float:
    """Per-user AUC weighted by the user's number of pools."""
    by_user = defaultdict(list)
    for pool in pools:
        by_user[pool.user_id].append(pool)
    num = den = 0.0
    for user_pools in by_user.values():
        try:
            value = auc(user_pools)
        except ValueError:
            continue
        num += len(user_pools) * value
        den += len(user_pools)
    if den == 0:
        raise ValueError("no user has a computable AUC")
    return num / den


def mrr(pools) -> float:
    pools = list(pools)
    if not pools:
        raise ValueError("MRR over no pools")
    return float(np.mean([1.0 / p.rank for p in pools]))


def ndcg_at_k(pools, k: int) -> float:
    if k < 1:
        raise ValueError("K must be at least 1")
    pools = list(pools)
    if not pools:
        raise ValueError("NDCG over no pools")
    gains = [1.0 / np.log2(p.rank + 1) if p.rank <= k else 0.0 for p in pools]
    return float(np.mean(gains))


def score_matrix_metrics(user_ids, scores: np.ndarray) -> dict:
    """All report metrics from a (pools, 1 + M) score matrix, positive first."""
    pools = pools_from_scores(user_ids, scores)
    return {
        "AUC": auc(pools),
        "GAUC": gauc(pools),
        "MRR": mrr(pools),
        "NDCG@5": ndcg_at_k(pools, 5),
        "NDCG@10": ndcg_at_k(pools, 10),
    }


def alpha_split_analysis(alphas, groups, expected=()) -> dict:
    """Mean fusion weight per group label: ``{group: {"mean_alpha", "count"}}``.

    Groups named in ``expected`` that have no members are left out with a warning.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    groups = list(groups)
    if len(groups) != len(alphas):
        raise ValueError("one group label per alpha value is required")
    buckets = defaultdict(list)
    for a, g in zip(alphas, groups):
        buckets[g].append(a)
    for g in expected:
        buckets.setdefault(g, [])
    out = {}
    for g in sorted(buckets, key=str):
        vals = buckets[g]
        if not vals:
            log.warning("group %s is empty; omitted", g)
            continue
        out[g] = {"mean_alpha": float(np.mean(vals)), "count": len(vals)}
    return out


def drop_rate(clean: float, noisy: float) -> float:
    """Relative decrease of a metric versus the clean run."""
    return (clean - noisy) / clean
