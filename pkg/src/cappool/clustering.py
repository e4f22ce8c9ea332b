"""Correlation-threshold clustering of component models.

Models whose historical log scores co-move get grouped: a model joins the
first existing cluster whose every member correlates with it above the
threshold, otherwise it founds a new cluster. The pass runs in ascending
model-id order, so results are deterministic for a given matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Clustering", "logscore_correlation_matrix", "cluster_models"]


@dataclass(frozen=True)
class Clustering:
    """A partition of model ids into clusters plus the threshold used."""

    clusters: tuple[tuple[str, ...], ...]
    phi: float

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for members in self.clusters:
            if not members:
                raise ValueError("empty cluster")
            overlap = seen.intersection(members)
            if overlap:
                raise ValueError(f"models in more than one cluster: {sorted(overlap)}")
            seen.update(members)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def members(self) -> frozenset[str]:
        return frozenset(m for cluster in self.clusters for m in cluster)


def logscore_correlation_matrix(
    scores: dict[str, dict], model_ids,
) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise Pearson correlation of per-key log-score series.

    ``scores[m]`` maps score keys (e.g. issue weeks) to floored log scores;
    pairs are compared on their common keys only. The diagonal is 1. Pairs
    with fewer than two common keys, or with a zero-variance series, get a
    correlation of 0 and are flagged.

    Returns (matrix, flagged) where ``flagged[i, j]`` marks entries forced
    to 0 because the correlation was undefined.
    """
    ids = list(model_ids)
    n = len(ids)
    corr = np.eye(n)
    flagged = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            si, sj = scores.get(ids[i], {}), scores.get(ids[j], {})
            common = sorted(si.keys() & sj.keys())
            value = None
            if len(common) >= 2:
                a = np.array([si[k] for k in common])
                b = np.array([sj[k] for k in common])
                da, db = a - a.mean(), b - b.mean()
                denom = np.sqrt((da @ da) * (db @ db))
                if denom > 0.0:
                    value = float(np.clip((da @ db) / denom, -1.0, 1.0))
            if value is None:
                value = 0.0
                flagged[i, j] = flagged[j, i] = True
            corr[i, j] = corr[j, i] = value
    return corr, flagged


def cluster_models(corr: np.ndarray, phi: float, model_ids) -> Clustering:
    """Greedy threshold partition of models given their correlation matrix.

    Models are visited in ascending id order; each joins the first cluster
    (by creation order) in which it correlates above ``phi`` with every
    member, else it starts a new one.
    """
    ids = sorted(model_ids)
    corr = np.asarray(corr, dtype=float)
    if corr.shape != (len(ids), len(ids)):
        raise ValueError(f"correlation matrix {corr.shape} does not match {len(ids)} models")
    if not 0.0 <= phi:
        raise ValueError("phi must be >= 0")
    index = {m: k for k, m in enumerate(ids)}
    clusters: list[list[str]] = []
    for m in ids:
        for members in clusters:
            if all(corr[index[m], index[j]] > phi for j in members):
                members.append(m)
                break
        else:
            clusters.append([m])
    result = Clustering(tuple(tuple(c) for c in clusters), phi)
    if result.members() != set(ids):
        raise AssertionError("partition does not cover the model set")
    return result
