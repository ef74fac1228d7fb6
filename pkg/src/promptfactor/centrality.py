"""Centroid-distance ranking of prompts in the embedding space.

Prompts far from the corpus centroid are ranked as more adversarial. The
default centroid is the mean over ALL prompt embeddings; an optional
per-class mode measures each prompt against its own class centroid
instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass
class RankedPrompt:
    id: int
    distance: float
    label: int
    degree: int


@dataclass
class CentralityRanking:
    """Prompts sorted by distance descending; ``degree`` starts at 1."""

    entries: list[RankedPrompt]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def top(self, n: int) -> list[RankedPrompt]:
        return self.entries[:n]


def centroid(embeddings: np.ndarray) -> np.ndarray:
    """Arithmetic mean of the embedding rows."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < 1:
        raise ValidationError("embeddings must be a nonempty 2-D matrix")
    return emb.mean(axis=0)


def rank_by_centrality(
    embeddings: np.ndarray,
    labels,
    class_filter: int | None = None,
    ids=None,
    per_class_centroids: bool = False,
) -> CentralityRanking:
    """Rank prompts by Euclidean distance to the centroid, descending.

    ``labels`` must cover every prompt (ground truth or propagated).
    ``class_filter`` restricts which prompts appear in the ranking; the
    centroid is still computed over all prompts unless
    ``per_class_centroids`` is set, in which case each prompt is measured
    against the centroid of its own class. Distance ties break toward the
    lower prompt id.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != emb.shape[0]:
        raise ValidationError("labels must cover every prompt")
    if ids is None:
        ids = np.arange(emb.shape[0], dtype=np.int64)
    else:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.shape[0] != emb.shape[0]:
            raise ValidationError("ids must cover every prompt")

    if per_class_centroids:
        distances = np.empty(emb.shape[0])
        for cls in np.unique(labels):
            members = labels == cls
            center = centroid(emb[members])
            distances[members] = np.linalg.norm(emb[members] - center, axis=1)
    else:
        distances = np.linalg.norm(emb - centroid(emb), axis=1)

    if class_filter is None:
        selected = np.arange(emb.shape[0])
    else:
        selected = np.flatnonzero(labels == class_filter)
        if selected.size == 0:
            raise ValidationError(f"no prompt has label {class_filter}")

    order = sorted(selected, key=lambda p: (-distances[p], ids[p]))
    entries = [
        RankedPrompt(id=int(ids[p]), distance=float(distances[p]),
                     label=int(labels[p]), degree=rank + 1)
        for rank, p in enumerate(order)
    ]
    return CentralityRanking(entries=entries)
