"""AUC and embedding aggregation statistics."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import rankdata

from .theory import envelope_radius

logger = logging.getLogger(__name__)


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with half credit for ties."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_bruteforce(scores, labels) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    p = scores[labels == 1]
    q = scores[labels != 1]
    if p.size == 0 or q.size == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    wins = (p[:, None] > q[None, :]).sum() + 0.5 * (p[:, None] == q[None, :]).sum()
    return float(wins / (p.size * q.size))


def residual_scale_ratio(R, central) -> float:
    """Mean residual row norm over mean central row norm (nan when the latter is 0)."""
    den = float(np.linalg.norm(central, axis=1).mean()) if len(central) else 0.0
    if den == 0:
        return float("nan")
    return float(np.linalg.norm(R, axis=1).mean()) / den


@dataclass
class AggregationStats:
    radii: list
    R_max: float
    intra_mean: float
    inter_mean: float
    intra_inter_ratio: float
    residual_scale_ratio: float

    def as_dict(self) -> dict:
        return asdict(self)


def aggregation_stats(E, assignment, R=None, central=None) -> AggregationStats:
    """Per-domain spread of an embedding table under a known partition.

    ``R`` and ``central`` (the ``W @ C_b`` part) are optional and only feed
    the residual scale ratio.
    """
    E = np.asarray(E, dtype=np.float64)
    assignment = np.asarray(assignment)
    if assignment.shape[0] != E.shape[0]:
        raise ValueError(f"assignment has {assignment.shape[0]} items, E has {E.shape[0]}")
    radii, centroids, intra = [], [], []
    n_dom = int(assignment.max()) + 1 if assignment.size else 0
    for k in range(n_dom):
        pts = E[assignment == k]
        if len(pts) == 0:
            logger.warning("domain %d is empty; skipped", k)
            radii.append(float("nan"))
            continue
        radii.append(envelope_radius(pts))
        centroids.append(pts.mean(axis=0))
        if len(pts) > 1:
            intra.append(pdist(pts))
    intra_mean = float(np.concatenate(intra).mean()) if intra else 0.0
    inter_mean = float(pdist(np.array(centroids)).mean()) if len(centroids) > 1 else 0.0
    ratio = intra_mean / inter_mean if inter_mean > 0 else (0.0 if intra_mean == 0 else float("nan"))
    rsr = float("nan")
    if R is not None and central is not None:
        rsr = residual_scale_ratio(R, central)
    return AggregationStats(radii, float(np.nanmax(radii)) if radii else 0.0,
                            intra_mean, inter_mean, ratio, rsr)
