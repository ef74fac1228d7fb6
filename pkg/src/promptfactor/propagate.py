"""Semi-supervised labeling: KNN label propagation from a seed set.

Every non-seed prompt takes the majority label of its k nearest seed
prompts in Euclidean embedding distance, in a single pass (pseudo-labels
are never fed back in as new seeds). The search is an exact scan over the
seeds; seed sets are small by construction and determinism beats speed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass
class LabelState:
    """Labels for every prompt after propagation.

    ``scores`` holds the fraction of neighbor votes for class 1; seed
    prompts keep their given label and score 0.0 or 1.0.
    """

    labels: np.ndarray
    is_seed: np.ndarray
    scores: np.ndarray


def knn_propagate(embeddings: np.ndarray, seeds, k: int = 5) -> LabelState:
    """Propagate seed labels to all prompts by k-nearest-seed majority vote.

    ``seeds`` is a sequence of (prompt index, label) pairs with distinct
    in-range indices and labels in {0, 1}. If fewer than k seeds exist, all
    of them vote. Vote ties go to the single nearest seed's label; distance
    ties prefer the lower prompt index, so the result is deterministic.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2:
        raise ValidationError("embeddings must be a 2-D matrix")
    m = emb.shape[0]
    seeds = sorted((int(idx), int(label)) for idx, label in seeds)
    if not seeds:
        raise ValidationError("at least one seed label is required")
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    seed_idx = np.array([i for i, _ in seeds], dtype=np.int64)
    seed_lab = np.array([l for _, l in seeds], dtype=np.int64)
    if np.unique(seed_idx).size != seed_idx.size:
        raise ValidationError("seed indices must be distinct")
    if seed_idx.min() < 0 or seed_idx.max() >= m:
        raise ValidationError("seed index out of range")
    if not np.isin(seed_lab, (0, 1)).all():
        raise ValidationError("seed labels must be 0 or 1")

    k_eff = min(k, seed_idx.size)
    labels = np.empty(m, dtype=np.int64)
    scores = np.empty(m, dtype=np.float64)
    is_seed = np.zeros(m, dtype=bool)
    is_seed[seed_idx] = True
    labels[seed_idx] = seed_lab
    scores[seed_idx] = seed_lab.astype(np.float64)

    query_idx = np.flatnonzero(~is_seed)
    seed_emb = emb[seed_idx]
    for start in range(0, query_idx.size, 512):
        rows = query_idx[start:start + 512]
        diff = emb[rows, None, :] - seed_emb[None, :, :]
        dist_sq = np.einsum("qsr,qsr->qs", diff, diff)
        # Stable sort over seeds already ordered by prompt index: distance
        # ties resolve to the lower-index seed.
        order = np.argsort(dist_sq, axis=1, kind="stable")[:, :k_eff]
        votes = seed_lab[order]
        ones = votes.sum(axis=1)
        majority = np.where(2 * ones > k_eff, 1, 0)
        tie = 2 * ones == k_eff
        majority[tie] = votes[tie, 0]
        labels[rows] = majority
        scores[rows] = ones / k_eff
    return LabelState(labels=labels, is_seed=is_seed, scores=scores)
